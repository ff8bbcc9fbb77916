use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::RingSpec;
use super::optim::OptimizerConfig;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nn::{Activation, Arch, MlpSpec};
use crate::tensor::DType;

/// Training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Alternating: update D, then compute G's gradient against the new D.
    Conventional,
    /// Simultaneous, with two explicit backward passes at (θ_D^i, θ_G^i).
    Simgd2pass,
    /// One pass; λ rescales the fake-branch gradient entering G.
    Fusedprop,
    /// One pass over L_G; λ⁻¹ pre-scales D's parameter gradients.
    Invfusedprop,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Conventional,
        Mode::Simgd2pass,
        Mode::Fusedprop,
        Mode::Invfusedprop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Conventional => "conventional",
            Mode::Simgd2pass => "simgd2pass",
            Mode::Fusedprop => "fusedprop",
            Mode::Invfusedprop => "invfusedprop",
        }
    }

    pub fn is_simultaneous(self) -> bool {
        self != Mode::Conventional
    }

    /// Whether `loss` can be trained in this mode.
    pub fn check_loss(self, loss: LossKind) -> Result<()> {
        if self == Mode::Fusedprop && !loss.has_lambda() {
            return Err(Error::UnsupportedLambda("hinge"));
        }
        Ok(())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode `{s}` (expected conventional|simgd2pass|fusedprop|invfusedprop)"
                ))
            })
    }
}

/// The part of a configuration the update rule itself needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub mode: Mode,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub lr_d: f64,
    pub lr_g: f64,
    pub reuse_z: bool,
    pub n_d: usize,
    pub match_power_iters: bool,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        self.mode.check_loss(self.loss)?;
        self.optimizer.validate()?;
        for (name, lr) in [("lr_d", self.lr_d), ("lr_g", self.lr_g)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.n_d == 0 {
            return Err(Error::Config("n_d must be at least 1".into()));
        }
        if self.n_d > 1 && self.mode != Mode::Conventional {
            return Err(Error::Config(format!(
                "n_d = {} needs conventional mode; {} updates D and G together",
                self.n_d, self.mode
            )));
        }
        Ok(())
    }
}

/// Fully resolved training configuration. Serialized as the sidecar echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub lr_d: f64,
    pub lr_g: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub reuse_z: bool,
    /// Spectral normalization on D with this many power iterations per forward.
    pub spectral: Option<usize>,
    pub match_power_iters: bool,
    pub n_d: usize,
    pub arch_g: Arch,
    pub arch_d: Arch,
    pub activation: Activation,
    pub dtype: DType,
    pub log_every: usize,
    pub eval_samples: usize,
    pub ring: RingSpec,
    pub adaptive_switch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Fusedprop,
            loss: LossKind::NonSaturating,
            optimizer: OptimizerConfig::adam(),
            lr_d: 2e-4,
            lr_g: 2e-4,
            batch: 64,
            iters: 5000,
            seed: 0,
            reuse_z: false,
            spectral: None,
            match_power_iters: false,
            n_d: 1,
            arch_g: Arch(vec![2, 64, 64, 2]),
            arch_d: Arch(vec![2, 64, 64, 1]),
            activation: Activation::Relu,
            dtype: DType::F64,
            log_every: 100,
            eval_samples: 2000,
            ring: RingSpec::default(),
            adaptive_switch: false,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            mode: self.mode,
            loss: self.loss,
            optimizer: self.optimizer,
            lr_d: self.lr_d,
            lr_g: self.lr_g,
            reuse_z: self.reuse_z,
            n_d: self.n_d,
            match_power_iters: self.match_power_iters,
        }
    }

    pub fn generator_spec(&self) -> MlpSpec {
        MlpSpec::new(self.arch_g.clone(), self.activation)
    }

    pub fn discriminator_spec(&self) -> MlpSpec {
        MlpSpec {
            spectral: self.spectral,
            ..MlpSpec::new(self.arch_d.clone(), self.activation)
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.arch_g.input()
    }

    pub fn validate(&self) -> Result<()> {
        if self.adaptive_switch {
            return Err(Error::NotImplemented(
                "adaptive switching between fusedprop and invfusedprop",
            ));
        }
        self.schedule().validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.log_every == 0 || self.eval_samples == 0 {
            return Err(Error::Config(
                "log_every and eval_samples must be positive".into(),
            ));
        }
        if self.spectral == Some(0) {
            return Err(Error::Config(
                "spectral normalization needs ≥ 1 power iteration".into(),
            ));
        }
        for arch in [&self.arch_g, &self.arch_d] {
            if arch.0.len() < 3 || arch.0.contains(&0) {
                return Err(Error::Config(format!("invalid architecture {arch}")));
            }
        }
        if self.arch_g.output() != 2 || self.arch_d.input() != 2 {
            return Err(Error::Config(format!(
                "ring data is 2-D: generator {} must end in 2 and discriminator {} start with 2",
                self.arch_g, self.arch_d
            )));
        }
        if self.arch_d.output() != 1 {
            return Err(Error::Config(format!(
                "discriminator {} must end in width 1",
                self.arch_d
            )));
        }
        self.ring.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn hinge_fusedprop_rejected() {
        let c = TrainConfig {
            loss: LossKind::Hinge,
            ..TrainConfig::default()
        };
        assert_eq!(c.validate().unwrap_err(), Error::UnsupportedLambda("hinge"));
        let c = TrainConfig {
            mode: Mode::Invfusedprop,
            ..c
        };
        c.validate().unwrap();
    }

    #[test]
    fn multiple_d_steps_only_conventional() {
        let c = TrainConfig {
            n_d: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig {
            mode: Mode::Conventional,
            ..c
        };
        c.validate().unwrap();
    }

    #[test]
    fn ttur_pair_accepted_and_echoed() {
        let c = TrainConfig {
            lr_d: 4e-4,
            lr_g: 1e-4,
            ..TrainConfig::default()
        };
        c.validate().unwrap();
        let back = TrainConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(c.to_json().contains("\"lr_d\": 0.0004"));
    }

    #[test]
    fn adaptive_switch_not_implemented() {
        let c = TrainConfig {
            adaptive_switch: true,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::NotImplemented(_))));
    }

    #[test]
    fn bad_values_rejected() {
        let base = TrainConfig::default();
        for c in [
            TrainConfig {
                lr_d: 0.0,
                ..base.clone()
            },
            TrainConfig {
                lr_g: -1.0,
                ..base.clone()
            },
            TrainConfig {
                batch: 0,
                ..base.clone()
            },
            TrainConfig {
                arch_d: Arch(vec![2, 8, 2]),
                ..base.clone()
            },
            TrainConfig {
                arch_g: Arch(vec![2, 8, 3]),
                ..base.clone()
            },
        ] {
            assert!(c.validate().unwrap_err().is_config());
        }
    }
}
