//! Dirac-GAN: real data is a point mass at 0, `D(x) = ψ·x`, `G(z) = θ`.

use super::config::{Mode, Schedule};
use super::gan::{Batches, Gan};
use super::optim::OptimizerConfig;
use crate::autograd::Tape;
use crate::error::Result;
use crate::losses::LossKind;
use crate::nn::{ForwardCtx, Module, ModuleOutput};
use crate::tensor::{Scalar, Tensor};

/// `D(x) = ψ·x`, a bias-free 1→1 linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracDiscriminator<T> {
    pub psi: Tensor<T>,
}

/// `G(z) = θ` for every latent.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracGenerator<T> {
    pub theta: Tensor<T>,
}

impl<T: Scalar> Module<T> for DiracDiscriminator<T> {
    fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: crate::autograd::NodeId,
        ctx: &ForwardCtx,
    ) -> Result<ModuleOutput> {
        let w = if ctx.trainable {
            tape.param(self.psi.clone())
        } else {
            tape.constant(self.psi.clone())
        };
        let output = tape.linear_scaled(input, w, None, ctx.param_grad_scale)?;
        Ok(ModuleOutput {
            output,
            params: vec![w],
        })
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.psi]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.psi]
    }

    fn input_width(&self) -> usize {
        1
    }

    fn output_width(&self) -> usize {
        1
    }
}

impl<T: Scalar> Module<T> for DiracGenerator<T> {
    fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: crate::autograd::NodeId,
        ctx: &ForwardCtx,
    ) -> Result<ModuleOutput> {
        let b = if ctx.trainable {
            tape.param(self.theta.clone())
        } else {
            tape.constant(self.theta.clone())
        };
        let zero = tape.constant(Tensor::zeros(&[1, 1]));
        let output = tape.linear(input, zero, Some(b))?;
        Ok(ModuleOutput {
            output,
            params: vec![b],
        })
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.theta]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.theta]
    }

    fn input_width(&self) -> usize {
        1
    }

    fn output_width(&self) -> usize {
        1
    }
}

/// Real samples at 0, latents at 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiracBatches;

impl<T: Scalar> Batches<T> for DiracBatches {
    fn real(&mut self, batch: usize) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(&[batch, 1]))
    }

    fn latent(&mut self, batch: usize, dim: usize) -> Tensor<T> {
        Tensor::ones(&[batch, dim])
    }
}

pub type DiracGan<T> = Gan<T, DiracGenerator<T>, DiracDiscriminator<T>>;

pub fn dirac_gan<T: Scalar>(
    mode: Mode,
    loss: LossKind,
    psi: f64,
    theta: f64,
    lr: f64,
) -> Result<DiracGan<T>> {
    let schedule = Schedule {
        mode,
        loss,
        optimizer: OptimizerConfig::Sgd,
        lr_d: lr,
        lr_g: lr,
        reuse_z: false,
        n_d: 1,
        match_power_iters: false,
    };
    Gan::new(
        DiracGenerator {
            theta: Tensor::vector(vec![T::of(theta)]),
        },
        DiracDiscriminator {
            psi: Tensor::from_f64(&[1, 1], &[psi])?,
        },
        schedule,
    )
}

/// `(ψ, θ)` after `steps` updates from `(ψ₀, θ₀)`.
pub fn dirac_trajectory(
    mode: Mode,
    loss: LossKind,
    psi0: f64,
    theta0: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut gan = dirac_gan::<f64>(mode, loss, psi0, theta0, lr)?;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        gan.step(&mut DiracBatches, 1)?;
        out.push((gan.d.psi.data()[0], gan.g.theta.data()[0]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_simgd_vs_altgd() {
        let sim =
            dirac_trajectory(Mode::Simgd2pass, LossKind::Wasserstein, 1.0, 1.0, 0.1, 1).unwrap()[0];
        let alt = dirac_trajectory(Mode::Conventional, LossKind::Wasserstein, 1.0, 1.0, 0.1, 1)
            .unwrap()[0];
        assert!(
            (sim.0 - 0.9).abs() <= 1e-15 && (sim.1 - 1.1).abs() <= 1e-15,
            "{sim:?}"
        );
        assert!(
            (alt.0 - 0.9).abs() <= 1e-15 && (alt.1 - 1.09).abs() <= 1e-15,
            "{alt:?}"
        );
    }

    #[test]
    fn fused_modes_follow_simgd() {
        let sim =
            dirac_trajectory(Mode::Simgd2pass, LossKind::Wasserstein, 1.0, 1.0, 0.1, 20).unwrap();
        for mode in [Mode::Fusedprop, Mode::Invfusedprop] {
            let fused = dirac_trajectory(mode, LossKind::Wasserstein, 1.0, 1.0, 0.1, 20).unwrap();
            for (a, b) in fused.iter().zip(&sim) {
                assert!(
                    (a.0 - b.0).abs() <= 1e-14 && (a.1 - b.1).abs() <= 1e-14,
                    "{mode}"
                );
            }
        }
    }

    #[test]
    fn simgd_spirals_outward() {
        // Wasserstein SimGD on the Dirac-GAN grows ψ² + θ² by (1 + α²) each step.
        let traj =
            dirac_trajectory(Mode::Simgd2pass, LossKind::Wasserstein, 1.0, 1.0, 0.1, 10).unwrap();
        let mut r2 = 2.0;
        for (p, t) in traj {
            r2 *= 1.01;
            assert!((p * p + t * t - r2).abs() < 1e-12);
        }
    }
}
