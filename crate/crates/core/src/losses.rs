//! GAN losses over the discriminator output `y` and their gradient scaling
//! factors.
//!
//! | loss          | L_D^R        | L_D         | L_G        | λ         | λ⁻¹          |
//! |---------------|--------------|-------------|------------|-----------|--------------|
//! | minimax       | ς⁺(−y)       | ς⁺(y)       | −ς⁺(y)     | −1        | −1           |
//! | nonsaturating | ς⁺(−y)       | ς⁺(y)       | ς⁺(−y)     | −e^{−y}   | −e^{y}       |
//! | wasserstein   | −y           | y           | −y         | −1        | −1           |
//! | least squares | (y−1)²       | y²          | (y−1)²     | 1 − 1/y   | y/(y−1)      |
//! | hinge         | relu(1−y)    | relu(y+1)   | −y         | none      | −H(y+1)      |
//!
//! `ς⁺` is softplus and `H(0) = 0`. λ = L_G′/L_D′ rescales the fake-branch
//! discriminator gradient into the generator gradient; λ⁻¹ goes the other way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{heaviside_scalar, sigmoid_scalar, softplus_scalar, Scalar, Tensor};

/// Least-squares singularity guard for λ (|y| below) and λ⁻¹ (|y − 1| below).
pub const LS_SINGULAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Minimax,
    #[serde(rename = "ns")]
    NonSaturating,
    Wasserstein,
    #[serde(rename = "ls")]
    LeastSquares,
    Hinge,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Minimax,
        LossKind::NonSaturating,
        LossKind::Wasserstein,
        LossKind::LeastSquares,
        LossKind::Hinge,
    ];

    /// CLI name.
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Minimax => "minimax",
            LossKind::NonSaturating => "ns",
            LossKind::Wasserstein => "wasserstein",
            LossKind::LeastSquares => "ls",
            LossKind::Hinge => "hinge",
        }
    }

    pub fn has_lambda(self) -> bool {
        self != LossKind::Hinge
    }

    pub fn d_real(self, y: f64) -> f64 {
        match self {
            LossKind::Minimax | LossKind::NonSaturating => softplus_scalar(-y),
            LossKind::Wasserstein => -y,
            LossKind::LeastSquares => (y - 1.0).powi(2),
            LossKind::Hinge => (1.0 - y).max(0.0),
        }
    }

    pub fn d_fake(self, y: f64) -> f64 {
        match self {
            LossKind::Minimax | LossKind::NonSaturating => softplus_scalar(y),
            LossKind::Wasserstein => y,
            LossKind::LeastSquares => y * y,
            LossKind::Hinge => (y + 1.0).max(0.0),
        }
    }

    pub fn gen(self, y: f64) -> f64 {
        match self {
            LossKind::Minimax => -softplus_scalar(y),
            LossKind::NonSaturating => softplus_scalar(-y),
            LossKind::Wasserstein | LossKind::Hinge => -y,
            LossKind::LeastSquares => (y - 1.0).powi(2),
        }
    }

    /// Closed-form L_D′ (fake branch), written independently of the tape.
    pub fn d_fake_prime(self, y: f64) -> f64 {
        match self {
            LossKind::Minimax | LossKind::NonSaturating => sigmoid_scalar(y),
            LossKind::Wasserstein => 1.0,
            LossKind::LeastSquares => 2.0 * y,
            LossKind::Hinge => heaviside_scalar(y + 1.0),
        }
    }

    /// Closed-form L_G′.
    pub fn gen_prime(self, y: f64) -> f64 {
        match self {
            LossKind::Minimax => -sigmoid_scalar(y),
            LossKind::NonSaturating => -sigmoid_scalar(-y),
            LossKind::Wasserstein | LossKind::Hinge => -1.0,
            LossKind::LeastSquares => 2.0 * (y - 1.0),
        }
    }

    /// λ(y) for one sample; `index` names the sample in errors.
    pub fn lambda_at(self, y: f64, index: usize) -> Result<f64> {
        match self {
            LossKind::Minimax | LossKind::Wasserstein => Ok(-1.0),
            LossKind::NonSaturating => Ok(-(-y).exp()),
            LossKind::LeastSquares => {
                if y.abs() < LS_SINGULAR_EPS {
                    Err(Error::SingularLambda { sample: index, y })
                } else {
                    Ok(1.0 - 1.0 / y)
                }
            }
            LossKind::Hinge => Err(Error::UnsupportedLambda("hinge")),
        }
    }

    /// λ⁻¹(y) for one sample.
    pub fn lambda_inv_at(self, y: f64, index: usize) -> Result<f64> {
        match self {
            LossKind::Minimax | LossKind::Wasserstein => Ok(-1.0),
            LossKind::NonSaturating => Ok(-y.exp()),
            LossKind::LeastSquares => {
                if (y - 1.0).abs() < LS_SINGULAR_EPS {
                    Err(Error::SingularLambdaInv { sample: index, y })
                } else {
                    Ok(y / (y - 1.0))
                }
            }
            LossKind::Hinge => Ok(-heaviside_scalar(y + 1.0)),
        }
    }

    /// Per-sample L_D^R on the tape.
    pub fn record_d_real<T: Scalar>(self, tape: &mut Tape<T>, y: NodeId) -> NodeId {
        match self {
            LossKind::Minimax | LossKind::NonSaturating => {
                let n = tape.neg(y);
                tape.softplus(n)
            }
            LossKind::Wasserstein => tape.neg(y),
            LossKind::LeastSquares => {
                let d = tape.add_scalar(y, -T::one());
                tape.square(d)
            }
            LossKind::Hinge => {
                let n = tape.neg(y);
                let s = tape.add_scalar(n, T::one());
                tape.relu(s)
            }
        }
    }

    /// Per-sample L_D (fake branch) on the tape.
    pub fn record_d_fake<T: Scalar>(self, tape: &mut Tape<T>, y: NodeId) -> NodeId {
        match self {
            LossKind::Minimax | LossKind::NonSaturating => tape.softplus(y),
            LossKind::Wasserstein => tape.scale(y, T::one()),
            LossKind::LeastSquares => tape.square(y),
            LossKind::Hinge => {
                let s = tape.add_scalar(y, T::one());
                tape.relu(s)
            }
        }
    }

    /// Per-sample L_G on the tape.
    pub fn record_gen<T: Scalar>(self, tape: &mut Tape<T>, y: NodeId) -> NodeId {
        match self {
            LossKind::Minimax => {
                let s = tape.softplus(y);
                tape.neg(s)
            }
            LossKind::NonSaturating => {
                let n = tape.neg(y);
                tape.softplus(n)
            }
            LossKind::Wasserstein | LossKind::Hinge => tape.neg(y),
            LossKind::LeastSquares => {
                let d = tape.add_scalar(y, -T::one());
                tape.square(d)
            }
        }
    }

    /// Points where λ / λ⁻¹ are singular or L_D has a kink.
    fn singular_points(self) -> &'static [f64] {
        match self {
            LossKind::LeastSquares => &[0.0, 1.0],
            LossKind::Hinge => &[-1.0, 1.0],
            _ => &[],
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(LossKind::Minimax),
            "ns" | "nonsaturating" => Ok(LossKind::NonSaturating),
            "wasserstein" => Ok(LossKind::Wasserstein),
            "ls" | "least_squares" => Ok(LossKind::LeastSquares),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected minimax|ns|wasserstein|ls|hinge)"
            ))),
        }
    }
}

/// Per-sample (L_D^R, L_D, L_G).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLosses<T> {
    pub d_real: Tensor<T>,
    pub d_fake: Tensor<T>,
    pub gen: Tensor<T>,
}

fn map_f64<T: Scalar>(y: &Tensor<T>, f: impl Fn(f64) -> f64) -> Tensor<T> {
    crate::tensor::map(y, |v| T::of(f(v.as_f64())))
}

pub fn eval_losses<T: Scalar>(
    kind: LossKind,
    y_real: &Tensor<T>,
    y_fake: &Tensor<T>,
) -> Result<SampleLosses<T>> {
    y_real.ensure_finite("discriminator output (real)")?;
    y_fake.ensure_finite("discriminator output (fake)")?;
    Ok(SampleLosses {
        d_real: map_f64(y_real, |y| kind.d_real(y)),
        d_fake: map_f64(y_fake, |y| kind.d_fake(y)),
        gen: map_f64(y_fake, |y| kind.gen(y)),
    })
}

/// Per-sample λ over a batch of fake outputs (any shape, one value per element).
pub fn lambda_of<T: Scalar>(kind: LossKind, y_fake: &Tensor<T>) -> Result<Tensor<T>> {
    if !kind.has_lambda() {
        return Err(Error::UnsupportedLambda("hinge"));
    }
    let vals = y_fake
        .data()
        .iter()
        .enumerate()
        .map(|(i, &y)| kind.lambda_at(y.as_f64(), i).map(T::of))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::vector(vals))
}

pub fn lambda_inv_of<T: Scalar>(kind: LossKind, y_fake: &Tensor<T>) -> Result<Tensor<T>> {
    let vals = y_fake
        .data()
        .iter()
        .enumerate()
        .map(|(i, &y)| kind.lambda_inv_at(y.as_f64(), i).map(T::of))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::vector(vals))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingIdentityReport {
    pub loss: LossKind,
    pub samples: usize,
    /// max rel. error of λ·L_D′ = L_G′; `None` when λ does not exist.
    pub lambda_err: Option<f64>,
    /// max rel. error of λ⁻¹·L_G′ = L_D′.
    pub lambda_inv_err: f64,
    /// max rel. error of λ·λ⁻¹ = 1 where both exist and are nonzero.
    pub product_err: Option<f64>,
}

impl ScalingIdentityReport {
    pub fn worst(&self) -> f64 {
        self.lambda_inv_err
            .max(self.lambda_err.unwrap_or(0.0))
            .max(self.product_err.unwrap_or(0.0))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Samples `y ~ U[−5, 5]`, rejecting 1e-3 neighborhoods of the loss's
/// singular and kink points, and checks both scaling identities against the
/// closed-form derivatives.
pub fn verify_scaling_identity(
    kind: LossKind,
    samples: usize,
    rng: &mut Rng,
) -> Result<ScalingIdentityReport> {
    if samples == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let mut report = ScalingIdentityReport {
        loss: kind,
        samples,
        lambda_err: kind.has_lambda().then_some(0.0),
        lambda_inv_err: 0.0,
        product_err: kind.has_lambda().then_some(0.0),
    };
    let mut drawn = 0;
    while drawn < samples {
        let y = rng.uniform(-5.0, 5.0);
        if kind.singular_points().iter().any(|&p| (y - p).abs() < 1e-3) {
            continue;
        }
        drawn += 1;
        let dp = kind.d_fake_prime(y);
        let gp = kind.gen_prime(y);
        let li = kind.lambda_inv_at(y, 0)?;
        report.lambda_inv_err = report.lambda_inv_err.max(rel(li * gp, dp));
        if let Some(err) = report.lambda_err.as_mut() {
            let l = kind.lambda_at(y, 0)?;
            *err = err.max(rel(l * dp, gp));
            if l != 0.0 && li != 0.0 {
                let pe = report.product_err.as_mut().expect("set with lambda");
                *pe = pe.max(rel(l * li, 1.0));
            }
        }
    }
    Ok(report)
}
