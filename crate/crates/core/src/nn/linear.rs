use super::{ForwardCtx, PowerIteration, SpectralState};
use crate::autograd::{linear_backward, LinearGrads, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sample_normal;
use crate::tensor::{self, Scalar, Tensor};

/// Fully connected layer `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub spectral: Option<SpectralState<T>>,
}

impl<T: Scalar> Linear<T> {
    /// He-normal weights (std √(2/fan_in)) and zero bias.
    pub fn he_init(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "zero-width layer {in_features}→{out_features}"
            )));
        }
        let std = (2.0 / in_features as f64).sqrt();
        let weight = tensor::scale(
            &sample_normal(rng, &[out_features, in_features]),
            T::of(std),
        );
        Ok(Linear {
            weight,
            bias: Tensor::zeros(&[out_features]),
            spectral: None,
        })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        match (weight.dims(), bias.dims()) {
            ([o, _], [ob]) if o == ob => Ok(Linear {
                weight,
                bias,
                spectral: None,
            }),
            (w, b) => Err(Error::dim(format!("weight {w:?} and bias {b:?} disagree"))),
        }
    }

    pub fn with_spectral(mut self, n_power_iterations: usize, rng: &mut Rng) -> Self {
        self.spectral = Some(SpectralState::new(
            self.out_features(),
            n_power_iterations,
            rng,
        ));
        self
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    /// σ̂ for this forward, advancing the power iteration unless frozen.
    fn sigma(&mut self, power: PowerIteration) -> Result<Option<T>> {
        let Some(state) = self.spectral.as_mut() else {
            return Ok(None);
        };
        let sigma = match (power, state.sigma) {
            (PowerIteration::Frozen, Some(s)) => s,
            (PowerIteration::Frozen, None) => {
                let n = state.n_power_iterations;
                state.estimate(&self.weight, n)?
            }
            (PowerIteration::Run { multiplier }, _) => {
                let n = state.n_power_iterations * multiplier;
                state.estimate(&self.weight, n)?
            }
        };
        Ok(Some(sigma))
    }

    /// Records the layer on `tape`. Returns the output and the (weight,
    /// bias) leaves. With spectral normalization the effective weight is
    /// `W/σ̂`, σ̂ held constant under differentiation.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: NodeId,
        ctx: &ForwardCtx,
        invfusedprop: bool,
    ) -> Result<(NodeId, [NodeId; 2])> {
        let sigma = self.sigma(ctx.power)?;
        let (w, b) = if ctx.trainable {
            (
                tape.param(self.weight.clone()),
                tape.param(self.bias.clone()),
            )
        } else {
            (
                tape.constant(self.weight.clone()),
                tape.constant(self.bias.clone()),
            )
        };
        let w_eff = match sigma {
            Some(s) => tape.scale(w, T::one() / s),
            None => w,
        };
        let scale = if invfusedprop {
            ctx.param_grad_scale
        } else {
            None
        };
        let y = tape.linear_scaled(x, w_eff, Some(b), scale)?;
        Ok((y, [w, b]))
    }
}

/// InvFusedProp backward of a linear layer: `gx = gy·W` from the unscaled
/// gradient, `gW = (λ⁻¹ ⊙ gy)ᵀ·x` and `gb = Σ_b λ⁻¹[b]·gy[b]`.
pub fn invfusedprop_linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    lambda_inv: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if lambda_inv.rank() != 1 || lambda_inv.len() != gy.rows() {
        return Err(Error::dim(format!(
            "lambda_inv extents {:?} do not match batch {}",
            lambda_inv.dims(),
            gy.rows()
        )));
    }
    let (gx, gw, gb) = linear_backward(x, w, gy, Some(lambda_inv.data()), LinearGrads::ALL)?;
    Ok((
        gx.expect("requested"),
        gw.expect("requested"),
        gb.expect("requested"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_difference_check;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::matrix(rows).unwrap()
    }

    #[test]
    fn forward_values() {
        let mut layer = Linear::from_parts(m(&[&[3.0, 4.0]]), Tensor::vector(vec![0.5])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(m(&[&[1.0, 2.0]]));
        let (y, _) = layer
            .forward(&mut tape, x, &ForwardCtx::default(), false)
            .unwrap();
        assert_eq!(tape.value(y).data(), &[11.5]);

        let mut ident =
            Linear::from_parts(m(&[&[1.0, 0.0], &[0.0, 1.0]]), Tensor::zeros(&[2])).unwrap();
        let mut tape = Tape::new();
        let xv = m(&[&[0.25, -7.0], &[3.0, 1.0]]);
        let x = tape.constant(xv.clone());
        let (y, _) = ident
            .forward(&mut tape, x, &ForwardCtx::default(), false)
            .unwrap();
        assert_eq!(tape.value(y), &xv);
    }

    #[test]
    fn invfusedprop_hand_example() {
        let (gx, gw, gb) = invfusedprop_linear_backward(
            &m(&[&[1.0, 2.0]]),
            &m(&[&[3.0, 4.0]]),
            &m(&[&[1.0]]),
            &Tensor::vector(vec![-1.0]),
        )
        .unwrap();
        assert_eq!(gx.data(), &[3.0, 4.0]);
        assert_eq!(gw.data(), &[-1.0, -2.0]);
        assert_eq!(gb.data(), &[-1.0]);
    }

    #[test]
    fn invfusedprop_ones_and_zeros() {
        let mut rng = Rng::new(2);
        let x: Tensor<f64> = sample_normal(&mut rng, &[5, 3]);
        let w: Tensor<f64> = sample_normal(&mut rng, &[4, 3]);
        let gy: Tensor<f64> = sample_normal(&mut rng, &[5, 4]);
        let (sx, sw, sb) = linear_backward(&x, &w, &gy, None, LinearGrads::ALL).unwrap();
        let (gx, gw, gb) = invfusedprop_linear_backward(&x, &w, &gy, &Tensor::ones(&[5])).unwrap();
        assert_eq!((Some(gx.clone()), Some(gw), Some(gb)), (sx, sw, sb));

        let (zx, zw, zb) = invfusedprop_linear_backward(&x, &w, &gy, &Tensor::zeros(&[5])).unwrap();
        assert_eq!(zx, gx);
        assert!(zw.data().iter().all(|&v| v == 0.0));
        assert!(zb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invfusedprop_errors() {
        let x = m(&[&[1.0, 2.0]]);
        let w = m(&[&[3.0, 4.0]]);
        let gy = m(&[&[1.0]]);
        assert!(matches!(
            invfusedprop_linear_backward(&x, &w, &gy, &Tensor::vector(vec![1.0, 1.0])),
            Err(Error::Dimension(_))
        ));
        assert_eq!(
            invfusedprop_linear_backward(&x, &w, &gy, &Tensor::vector(vec![f64::INFINITY]))
                .unwrap_err(),
            Error::NonFinite {
                what: "per-sample parameter-gradient scale",
                index: 0
            }
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let x: Tensor<f64> = sample_normal(&mut rng, &[5, 3]);
        let w: Tensor<f64> = sample_normal(&mut rng, &[4, 3]);
        let b: Tensor<f64> = sample_normal(&mut rng, &[4]);
        let c: Tensor<f64> = sample_normal(&mut rng, &[5, 4]);
        let rep = finite_difference_check(&[x, w, b], 1e-4, |tape, ids| {
            let y = tape.linear(ids[0], ids[1], Some(ids[2]))?;
            let ci = tape.constant(c.clone());
            let p = tape.mul(y, ci)?;
            let s = tape.softplus(p);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-6, "{rep:?}");
    }

    #[test]
    fn zero_width_rejected() {
        assert!(matches!(
            Linear::<f64>::he_init(0, 3, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }
}
