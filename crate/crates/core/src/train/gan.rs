//! One GAN update under each of the four schedules.

use super::config::{Mode, Schedule, TrainConfig};
use super::data::{sample_ring_gaussians, RingSpec};
use super::optim::OptimizerState;
use crate::autograd::{GradStore, NodeId, Tape};
use crate::error::{Error, Result};
use crate::losses::{lambda_inv_of, lambda_of, LossKind};
use crate::nn::{build_discriminator, build_generator, ForwardCtx, Mlp, Module, PowerIteration};
use crate::rng::{streams, Rng};
use crate::sample_normal;
use crate::tensor::{Scalar, Tensor};

/// Source of real batches and latent draws.
pub trait Batches<T: Scalar> {
    fn real(&mut self, batch: usize) -> Result<Tensor<T>>;
    fn latent(&mut self, batch: usize, dim: usize) -> Tensor<T>;
}

/// Ring-of-Gaussians data with standard-normal latents, each on its own
/// stream of the run seed.
#[derive(Debug, Clone)]
pub struct RingBatches {
    data: Rng,
    latent: Rng,
    spec: RingSpec,
    /// Number of latent vectors drawn so far.
    pub z_draws: u64,
}

impl RingBatches {
    pub fn new(seed: u64, spec: RingSpec) -> Self {
        RingBatches {
            data: Rng::with_stream(seed, streams::DATA),
            latent: Rng::with_stream(seed, streams::LATENT),
            spec,
            z_draws: 0,
        }
    }
}

impl<T: Scalar> Batches<T> for RingBatches {
    fn real(&mut self, batch: usize) -> Result<Tensor<T>> {
        sample_ring_gaussians(&mut self.data, batch, &self.spec)
    }

    fn latent(&mut self, batch: usize, dim: usize) -> Tensor<T> {
        self.z_draws += batch as u64;
        sample_normal(&mut self.latent, &[batch, dim])
    }
}

/// Batch means of the three losses and of D's outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss_d_real: f64,
    pub loss_d_fake: f64,
    pub loss_g: f64,
    pub y_real_mean: f64,
    pub y_fake_mean: f64,
}

impl StepStats {
    fn from_outputs<T: Scalar>(kind: LossKind, y_real: &Tensor<T>, y_fake: &Tensor<T>) -> Self {
        let mean = |t: &Tensor<T>, f: &dyn Fn(f64) -> f64| {
            t.data().iter().map(|v| f(v.as_f64())).sum::<f64>() / t.len() as f64
        };
        StepStats {
            loss_d_real: mean(y_real, &|y| kind.d_real(y)),
            loss_d_fake: mean(y_fake, &|y| kind.d_fake(y)),
            loss_g: mean(y_fake, &|y| kind.gen(y)),
            y_real_mean: mean(y_real, &|y| y),
            y_fake_mean: mean(y_fake, &|y| y),
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.loss_d_real,
            self.loss_d_fake,
            self.loss_g,
            self.y_real_mean,
            self.y_fake_mean,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// ∂(L_D^R + L_D)/∂θ_D and ∂L_G/∂θ_G at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads<T> {
    pub d: Vec<Tensor<T>>,
    pub g: Vec<Tensor<T>>,
    pub stats: StepStats,
}

fn collect_grads<T: Scalar>(
    tape: &Tape<T>,
    grads: &GradStore<T>,
    leaves: &[NodeId],
) -> Vec<Tensor<T>> {
    leaves
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id)))
        .collect()
}

fn mean_of<T: Scalar>(tape: &mut Tape<T>, per_sample: NodeId) -> NodeId {
    tape.mean(per_sample)
}

/// Generator, discriminator and their optimizers.
#[derive(Debug, Clone)]
pub struct Gan<T: Scalar, G, D> {
    pub g: G,
    pub d: D,
    pub opt_g: OptimizerState<T>,
    pub opt_d: OptimizerState<T>,
    pub schedule: Schedule,
    /// Completed iterations.
    pub iter: usize,
}

impl<T: Scalar> Gan<T, Mlp<T>, Mlp<T>> {
    /// MLP pair initialized from the config's seed.
    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let g = build_generator(
            &config.generator_spec(),
            &mut Rng::with_stream(config.seed, streams::INIT_G),
        )?;
        let d = build_discriminator(
            &config.discriminator_spec(),
            config.mode == Mode::Invfusedprop,
            &mut Rng::with_stream(config.seed, streams::INIT_D),
        )?;
        Gan::new(g, d, config.schedule())
    }
}

impl<T: Scalar, G: Module<T>, D: Module<T>> Gan<T, G, D> {
    pub fn new(g: G, d: D, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        if g.output_width() != d.input_width() {
            return Err(Error::Config(format!(
                "generator emits width {}, discriminator takes {}",
                g.output_width(),
                d.input_width()
            )));
        }
        if d.output_width() != 1 {
            return Err(Error::Config(
                "discriminator must emit one value per sample".into(),
            ));
        }
        Ok(Gan {
            g,
            d,
            opt_g: OptimizerState::new(schedule.optimizer),
            opt_d: OptimizerState::new(schedule.optimizer),
            schedule,
            iter: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.g.input_width()
    }

    fn fused_power(&self) -> PowerIteration {
        PowerIteration::Run {
            multiplier: if self.schedule.match_power_iters {
                2
            } else {
                1
            },
        }
    }

    /// Generator samples for latents `z`, no gradients recorded.
    pub fn generate(&mut self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let zi = tape.constant(z.clone());
        let ctx = ForwardCtx {
            trainable: false,
            ..ForwardCtx::default()
        };
        let out = self.g.forward(&mut tape, zi, &ctx)?;
        Ok(tape.value(out.output).clone())
    }

    /// Records D on `[x; G(z)]` and returns (tape, real rows, fake rows, D leaves, G leaves).
    #[allow(clippy::type_complexity)]
    fn record_joint(
        &mut self,
        x: &Tensor<T>,
        z: &Tensor<T>,
        g_ctx: &ForwardCtx,
        d_ctx: impl FnOnce(&mut Tape<T>) -> ForwardCtx,
        fake_hook: impl FnOnce(&mut Tape<T>, NodeId) -> Result<NodeId>,
    ) -> Result<(Tape<T>, NodeId, NodeId, Vec<NodeId>, Vec<NodeId>)> {
        let b = x.rows();
        if z.rows() != b {
            return Err(Error::dim(format!(
                "{b} real rows but {} latents",
                z.rows()
            )));
        }
        let mut tape = Tape::new();
        let zi = tape.constant(z.clone());
        let gout = self.g.forward(&mut tape, zi, g_ctx)?;
        let fake = fake_hook(&mut tape, gout.output)?;
        let xi = tape.constant(x.clone());
        let joint = tape.concat_rows(&[xi, fake])?;
        let ctx = d_ctx(&mut tape);
        let dout = self.d.forward(&mut tape, joint, &ctx)?;
        let yr = tape.slice_rows(dout.output, 0, b)?;
        let yf = tape.slice_rows(dout.output, b, b)?;
        Ok((tape, yr, yf, dout.params, gout.params))
    }

    /// Conventional first pass: ∂(L_D^R + L_D)/∂θ_D with G held constant.
    pub fn d_pass(
        &mut self,
        x: &Tensor<T>,
        z: &Tensor<T>,
        power: PowerIteration,
    ) -> Result<(Vec<Tensor<T>>, StepStats)> {
        let kind = self.schedule.loss;
        let g_ctx = ForwardCtx {
            trainable: false,
            ..ForwardCtx::default()
        };
        let (mut tape, yr, yf, d_leaves, _) = self.record_joint(
            x,
            z,
            &g_ctx,
            |_| ForwardCtx {
                power,
                ..ForwardCtx::default()
            },
            |_, gz| Ok(gz),
        )?;
        let stats = StepStats::from_outputs(kind, tape.value(yr), tape.value(yf));
        let lr = kind.record_d_real(&mut tape, yr);
        let lf = kind.record_d_fake(&mut tape, yf);
        let (mr, mf) = (mean_of(&mut tape, lr), mean_of(&mut tape, lf));
        let root = tape.add(mr, mf)?;
        let grads = tape.backward(root)?;
        Ok((collect_grads(&tape, &grads, &d_leaves), stats))
    }

    /// Conventional second pass: ∂L_G/∂θ_G with D held constant.
    pub fn g_pass(
        &mut self,
        z: &Tensor<T>,
        power: PowerIteration,
    ) -> Result<(Vec<Tensor<T>>, f64)> {
        let kind = self.schedule.loss;
        let mut tape = Tape::new();
        let zi = tape.constant(z.clone());
        let gout = self.g.forward(&mut tape, zi, &ForwardCtx::default())?;
        let d_ctx = ForwardCtx {
            trainable: false,
            param_grad_scale: None,
            power,
        };
        let dout = self.d.forward(&mut tape, gout.output, &d_ctx)?;
        let lg = kind.record_gen(&mut tape, dout.output);
        let root = mean_of(&mut tape, lg);
        let loss_g = tape.value(root).data()[0].as_f64();
        let grads = tape.backward(root)?;
        Ok((collect_grads(&tape, &grads, &gout.params), loss_g))
    }

    /// FusedProp: one backward of mean(L_D^R) + mean(L_D), with the
    /// gradient entering G(z) scaled per sample by λ(y_fake).
    pub fn fused_pass(&mut self, x: &Tensor<T>, z: &Tensor<T>) -> Result<StepGrads<T>> {
        let kind = self.schedule.loss;
        let power = self.fused_power();
        let mut slot = None;
        let (mut tape, yr, yf, d_leaves, g_leaves) = self.record_joint(
            x,
            z,
            &ForwardCtx::default(),
            |_| ForwardCtx {
                power,
                ..ForwardCtx::default()
            },
            |tape, gz| {
                let s = tape.scale_slot();
                slot = Some(s);
                tape.fusedprop_boundary(gz, s)
            },
        )?;
        let lambda = lambda_of(kind, tape.value(yf))?;
        tape.bind_scale(slot.expect("boundary recorded"), &lambda)?;
        let stats = StepStats::from_outputs(kind, tape.value(yr), tape.value(yf));
        let lr = kind.record_d_real(&mut tape, yr);
        let lf = kind.record_d_fake(&mut tape, yf);
        let (mr, mf) = (mean_of(&mut tape, lr), mean_of(&mut tape, lf));
        let root = tape.add(mr, mf)?;
        let grads = tape.backward(root)?;
        Ok(StepGrads {
            d: collect_grads(&tape, &grads, &d_leaves),
            g: collect_grads(&tape, &grads, &g_leaves),
            stats,
        })
    }

    /// InvFusedProp: one backward of mean(L_D^R) + mean(L_G), D's parameter
    /// gradients pre-scaled per sample by `[1…1, λ⁻¹(y_fake)]`.
    pub fn inv_fused_pass(&mut self, x: &Tensor<T>, z: &Tensor<T>) -> Result<StepGrads<T>> {
        let kind = self.schedule.loss;
        let power = self.fused_power();
        let mut slot = None;
        let (mut tape, yr, yf, d_leaves, g_leaves) = self.record_joint(
            x,
            z,
            &ForwardCtx::default(),
            |tape| {
                let s = tape.scale_slot();
                slot = Some(s);
                ForwardCtx {
                    trainable: true,
                    param_grad_scale: Some(s),
                    power,
                }
            },
            |_, gz| Ok(gz),
        )?;
        let lambda_inv = lambda_inv_of(kind, tape.value(yf))?;
        let b = x.rows();
        let mut factors = vec![T::one(); b];
        factors.extend_from_slice(lambda_inv.data());
        tape.bind_scale(slot.expect("slot allocated"), &Tensor::vector(factors))?;
        let stats = StepStats::from_outputs(kind, tape.value(yr), tape.value(yf));
        let lr = kind.record_d_real(&mut tape, yr);
        let lg = kind.record_gen(&mut tape, yf);
        let (mr, mg) = (mean_of(&mut tape, lr), mean_of(&mut tape, lg));
        let root = tape.add(mr, mg)?;
        let grads = tape.backward(root)?;
        Ok(StepGrads {
            d: collect_grads(&tape, &grads, &d_leaves),
            g: collect_grads(&tape, &grads, &g_leaves),
            stats,
        })
    }

    /// Both gradients at the current parameters with a shared `z`. The
    /// conventional and simgd2pass modes use two explicit passes, pass two
    /// reusing pass one's spectral estimate.
    pub fn simultaneous_grads(&mut self, x: &Tensor<T>, z: &Tensor<T>) -> Result<StepGrads<T>> {
        match self.schedule.mode {
            Mode::Fusedprop => self.fused_pass(x, z),
            Mode::Invfusedprop => self.inv_fused_pass(x, z),
            Mode::Conventional | Mode::Simgd2pass => self.two_pass_grads(x, z),
        }
    }

    /// Reference gradients from two explicit passes at the current parameters.
    pub fn two_pass_grads(&mut self, x: &Tensor<T>, z: &Tensor<T>) -> Result<StepGrads<T>> {
        let (d, stats) = self.d_pass(x, z, self.fused_power())?;
        let (g, _) = self.g_pass(z, PowerIteration::Frozen)?;
        Ok(StepGrads { d, g, stats })
    }

    /// Non-finite losses stop the run; non-finite gradients are caught by
    /// the optimizer and tagged in [`Self::step`].
    fn check(&self, stats: &StepStats) -> Result<()> {
        if !stats.is_finite() {
            return Err(Error::Divergence {
                iter: self.iter,
                detail: format!("non-finite loss {stats:?}"),
            });
        }
        Ok(())
    }

    fn tag(&self, e: Error) -> Error {
        if e.is_numeric() && !matches!(e, Error::Divergence { .. }) {
            Error::Divergence {
                iter: self.iter,
                detail: e.to_string(),
            }
        } else {
            e
        }
    }

    fn update_d(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        let lr = self.schedule.lr_d;
        self.opt_d.step(self.d.params_mut(), grads, lr)
    }

    fn update_g(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        let lr = self.schedule.lr_g;
        self.opt_g.step(self.g.params_mut(), grads, lr)
    }

    /// One training iteration. Numeric failures come back as
    /// [`Error::Divergence`] tagged with the iteration index.
    pub fn step(&mut self, batches: &mut impl Batches<T>, batch: usize) -> Result<StepStats> {
        let stats = self.step_inner(batches, batch).map_err(|e| self.tag(e))?;
        self.iter += 1;
        Ok(stats)
    }

    fn step_inner(&mut self, batches: &mut impl Batches<T>, batch: usize) -> Result<StepStats> {
        let dim = self.latent_dim();
        match self.schedule.mode {
            Mode::Conventional => {
                let run1 = PowerIteration::Run { multiplier: 1 };
                let mut last = None;
                for _ in 0..self.schedule.n_d {
                    let x = batches.real(batch)?;
                    let z = batches.latent(batch, dim);
                    let (gd, stats) = self.d_pass(&x, &z, run1)?;
                    self.check(&stats)?;
                    self.update_d(&gd)?;
                    last = Some((z, stats));
                }
                let (z, mut stats) = last.expect("n_d ≥ 1");
                let z = if self.schedule.reuse_z {
                    z
                } else {
                    batches.latent(batch, dim)
                };
                let (gg, loss_g) = self.g_pass(&z, run1)?;
                stats.loss_g = loss_g;
                self.check(&stats)?;
                self.update_g(&gg)?;
                Ok(stats)
            }
            _ => {
                let x = batches.real(batch)?;
                let z = batches.latent(batch, dim);
                let grads = self.simultaneous_grads(&x, &z)?;
                self.check(&grads.stats)?;
                self.update_d(&grads.d)?;
                self.update_g(&grads.g)?;
                Ok(grads.stats)
            }
        }
    }

    /// Flat copy of every parameter, D first then G.
    pub fn flat_params(&self) -> Vec<f64> {
        self.d
            .params()
            .into_iter()
            .chain(self.g.params())
            .flat_map(|p| p.to_f64_vec())
            .collect()
    }
}
