//! Layers and the MLP generator/discriminator.

mod linear;
mod spectral;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, SlotId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub use linear::{invfusedprop_linear_backward, Linear};
pub use spectral::{power_iteration, SpectralState};

/// How spectral-normalized layers treat their power iteration on a forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerIteration {
    /// Run `multiplier × n_power_iterations` rounds and refresh σ̂.
    Run { multiplier: usize },
    /// Reuse the σ̂ from the previous forward.
    Frozen,
}

/// Per-forward options shared by every layer of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCtx {
    /// Record parameters as differentiable leaves (otherwise constants).
    pub trainable: bool,
    /// Per-sample parameter-gradient scale for InvFusedProp layers.
    pub param_grad_scale: Option<SlotId>,
    pub power: PowerIteration,
}

impl Default for ForwardCtx {
    fn default() -> Self {
        ForwardCtx {
            trainable: true,
            param_grad_scale: None,
            power: PowerIteration::Run { multiplier: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleOutput {
    pub output: NodeId,
    /// One leaf per parameter, in [`Module::params`] order.
    pub params: Vec<NodeId>,
}

/// A differentiable network with a flat parameter list.
pub trait Module<T: Scalar> {
    fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: NodeId,
        ctx: &ForwardCtx,
    ) -> Result<ModuleOutput>;
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Leaky relu with slope 0.2.
    Lrelu,
    Tanh,
}

impl Activation {
    fn record<T: Scalar>(self, tape: &mut Tape<T>, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Lrelu => tape.leaky_relu(x, T::of(0.2)),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "lrelu" | "leaky_relu" => Ok(Activation::Lrelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Lrelu => "lrelu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Dash-separated layer widths, e.g. `2-64-64-2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Arch(pub Vec<usize>);

impl Arch {
    pub fn input(&self) -> usize {
        self.0[0]
    }

    pub fn output(&self) -> usize {
        *self.0.last().expect("validated")
    }

    /// Same depth with every hidden width multiplied by `k`.
    pub fn widen(&self, k: usize) -> Arch {
        let n = self.0.len();
        Arch(
            self.0
                .iter()
                .enumerate()
                .map(|(i, &w)| if i == 0 || i == n - 1 { w } else { w * k })
                .collect(),
        )
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad width `{p}` in architecture `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if widths.len() < 3 {
            return Err(Error::Config(format!(
                "architecture `{s}` needs at least one hidden layer"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!(
                "architecture `{s}` has a zero-width layer"
            )));
        }
        Ok(Arch(widths))
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl Serialize for Arch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Arch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub arch: Arch,
    pub activation: Activation,
    /// Spectral-normalize every layer with this many power iterations per forward.
    pub spectral: Option<usize>,
}

impl MlpSpec {
    pub fn new(arch: Arch, activation: Activation) -> Self {
        MlpSpec {
            arch,
            activation,
            spectral: None,
        }
    }
}

/// Multilayer perceptron: linear layers with an activation between them and
/// no output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
    /// Layers pre-scale parameter gradients by the context's per-sample slot.
    pub invfusedprop: bool,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(spec: &MlpSpec, invfusedprop: bool, rng: &mut Rng) -> Result<Self> {
        let w = &spec.arch.0;
        if w.len() < 3 || w.contains(&0) {
            return Err(Error::Config(format!("invalid architecture {}", spec.arch)));
        }
        let layers = w
            .windows(2)
            .map(|pair| {
                let layer = Linear::he_init(pair[0], pair[1], rng)?;
                Ok(match spec.spectral {
                    Some(n) => layer.with_spectral(n, rng),
                    None => layer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp {
            layers,
            activation: spec.activation,
            invfusedprop,
        })
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: NodeId,
        ctx: &ForwardCtx,
    ) -> Result<ModuleOutput> {
        let mut h = input;
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (y, p) = layer.forward(tape, h, ctx, self.invfusedprop)?;
            params.extend(p);
            h = if i < last {
                self.activation.record(tape, y)
            } else {
                y
            };
        }
        Ok(ModuleOutput { output: h, params })
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn input_width(&self) -> usize {
        self.layers[0].in_features()
    }

    fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features()
    }
}

/// Generator MLP, He-initialized from `rng`.
pub fn build_generator<T: Scalar>(spec: &MlpSpec, rng: &mut Rng) -> Result<Mlp<T>> {
    Mlp::new(spec, false, rng)
}

/// Discriminator MLP (output width 1). `invfusedprop` selects layers that
/// pre-scale parameter gradients per sample.
pub fn build_discriminator<T: Scalar>(
    spec: &MlpSpec,
    invfusedprop: bool,
    rng: &mut Rng,
) -> Result<Mlp<T>> {
    if spec.arch.output() != 1 {
        return Err(Error::Config(format!(
            "discriminator {} must end in width 1",
            spec.arch
        )));
    }
    Mlp::new(spec, invfusedprop, rng)
}
