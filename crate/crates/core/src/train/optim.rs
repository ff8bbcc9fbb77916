use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    /// Adam with (β₁, β₂) = (0.0, 0.9), ε = 1e-8.
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OptimizerConfig::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Config(format!(
                    "adam needs 0 ≤ β₁, β₂ < 1 and ε > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

fn check_shapes<T: Scalar>(params: &[&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dims() != g.dims() {
            return Err(Error::dim(format!(
                "parameter {i} has extents {:?}, gradient {:?}",
                p.dims(),
                g.dims()
            )));
        }
    }
    Ok(())
}

fn check_finite<T: Scalar>(grads: &[Tensor<T>]) -> Result<()> {
    let mut offset = 0;
    for g in grads {
        if let Some(i) = g.first_non_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                index: offset + i,
            });
        }
        offset += g.len();
    }
    Ok(())
}

/// `θ ← θ − α·g`.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
) -> Result<()> {
    check_shapes(params, grads)?;
    check_finite(grads)?;
    let lr = T::of(lr);
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros_like(params: &[&Tensor<T>]) -> Self {
        AdamMoments {
            m: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
        }
    }
}

/// Bias-corrected Adam update for step `t ≥ 1`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
    moments: &mut AdamMoments<T>,
    t: u64,
    (beta1, beta2, eps): (f64, f64, f64),
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("adam step index starts at 1".into()));
    }
    check_shapes(params, grads)?;
    check_finite(grads)?;
    let b1 = T::of(beta1);
    let b2 = T::of(beta2);
    let one = T::one();
    let c1 = T::of(1.0 - beta1.powi(t as i32));
    let c2 = T::of(1.0 - beta2.powi(t as i32));
    let lr = T::of(lr);
    let eps = T::of(eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        let g = g.data();
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Optimizer plus its running state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub moments: Option<AdamMoments<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            moments: None,
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        mut params: Vec<&mut Tensor<T>>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        match self.config {
            OptimizerConfig::Sgd => {
                sgd_step(&mut params, grads, lr)?;
                self.t += 1;
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let moments = self.moments.get_or_insert_with(|| {
                    let views: Vec<&Tensor<T>> = params.iter().map(|p| &**p).collect();
                    AdamMoments::zeros_like(&views)
                });
                adam_step(
                    &mut params,
                    grads,
                    lr,
                    moments,
                    self.t + 1,
                    (beta1, beta2, eps),
                )?;
                self.t += 1;
            }
        }
        Ok(())
    }
}
