//! Flags that map onto [`TrainConfig`] fields.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use fusedprop::losses::LossKind;
use fusedprop::nn::{Activation, Arch};
use fusedprop::train::{Mode, OptimizerConfig, TrainConfig};
use fusedprop::DType;

use crate::output::load_config;

/// Every flag is optional; unset flags keep the value from `--config` or
/// the built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Resolved config sidecar from an earlier run to start from.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Conventional mode: reuse pass one's latents in pass two.
    #[arg(long)]
    pub reuse_z: bool,
    /// Spectral normalization on D with N power iterations per forward.
    #[arg(long, value_name = "N")]
    pub spectral: Option<usize>,
    /// Double the power iterations of single-pass forwards.
    #[arg(long)]
    pub match_power_iters: bool,
    /// D updates per G update (conventional only).
    #[arg(long)]
    pub n_d: Option<usize>,
    #[arg(long)]
    pub arch_g: Option<Arch>,
    #[arg(long)]
    pub arch_d: Option<Arch>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub dtype: Option<DType>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub ring_modes: Option<usize>,
    #[arg(long)]
    pub ring_radius: Option<f64>,
    #[arg(long)]
    pub ring_sigma: Option<f64>,
    /// Switch between fusedprop and invfusedprop per batch.
    #[arg(long)]
    pub adaptive_switch: bool,
}

impl ConfigArgs {
    /// Applies the flags over `base`, or over the `--config` file when given.
    pub fn resolve(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => load_config(path)?,
            None => base,
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    c.$field = v.clone();
                })*
            };
        }
        set!(
            loss,
            lr_d,
            lr_g,
            batch,
            iters,
            seed,
            n_d,
            arch_g,
            arch_d,
            activation,
            dtype,
            log_every,
            eval_samples
        );
        if self.spectral.is_some() {
            c.spectral = self.spectral;
        }
        if let Some(v) = self.ring_modes {
            c.ring.modes = v;
        }
        if let Some(v) = self.ring_radius {
            c.ring.radius = v;
        }
        if let Some(v) = self.ring_sigma {
            c.ring.sigma = v;
        }
        c.reuse_z |= self.reuse_z;
        c.match_power_iters |= self.match_power_iters;
        c.adaptive_switch |= self.adaptive_switch;
        c.optimizer = self.optimizer(c.optimizer)?;
        Ok(c)
    }

    fn optimizer(&self, current: OptimizerConfig) -> Result<OptimizerConfig> {
        let mut opt = match self.optimizer.as_deref() {
            None => current,
            Some("sgd") => OptimizerConfig::Sgd,
            Some("adam") => match current {
                OptimizerConfig::Adam { .. } => current,
                OptimizerConfig::Sgd => OptimizerConfig::adam(),
            },
            Some(other) => {
                return Err(fusedprop::Error::Config(format!(
                    "unknown optimizer `{other}` (expected adam|sgd)"
                ))
                .into())
            }
        };
        match &mut opt {
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                *beta1 = self.beta1.unwrap_or(*beta1);
                *beta2 = self.beta2.unwrap_or(*beta2);
                *eps = self.adam_eps.unwrap_or(*eps);
            }
            OptimizerConfig::Sgd => {
                if self.beta1.is_some() || self.beta2.is_some() || self.adam_eps.is_some() {
                    return Err(fusedprop::Error::Config(
                        "Adam flags given with the sgd optimizer".into(),
                    )
                    .into());
                }
            }
        }
        Ok(opt)
    }
}

/// `--mode`, kept apart so `bench` can take `--modes` instead.
#[derive(Debug, Clone, Default, Args)]
pub struct ModeArg {
    #[arg(long)]
    pub mode: Option<Mode>,
}
