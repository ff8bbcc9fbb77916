//! Gradient verification: finite differences over every differentiable op
//! and both model builders, fused-versus-two-pass equivalence, and the
//! loss scaling identities.

use std::fmt;

use serde::Serialize;

use crate::autograd::{projected_difference_check, rel_err, NodeId, Tape};
use crate::error::{Error, Result};
use crate::losses::{verify_scaling_identity, LossKind};
use crate::nn::{
    build_discriminator, build_generator, Activation, Arch, ForwardCtx, Mlp, MlpSpec, Module,
    PowerIteration,
};
use crate::rng::{streams, Rng};
use crate::sample_normal;
use crate::tensor::{self, DType, Scalar, Tensor};
use crate::train::{Batches, Gan, Mode, RingBatches, StepGrads, TrainConfig};

mod exact;

use exact::Coord;

/// Relu-family inputs closer than this to the kink trigger a redraw.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 1000;

/// `max_k ‖a_k − b_k‖∞ / ‖b_k‖∞`; a pair of all-zero tensors counts as exact.
pub fn tensor_rel_err<T: Scalar>(a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} tensors vs {}", a.len(), b.len())));
    }
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let diff = tensor::sub(x, y)?.max_abs().as_f64();
        if diff == 0.0 {
            continue;
        }
        worst = worst.max(diff / y.max_abs().as_f64());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdCase {
    pub name: String,
    pub max_rel_err: f64,
    pub points: usize,
    /// Points rejected for sitting within [`KINK_MARGIN`] of a kink.
    pub redraws: usize,
}

type Build = Box<dyn FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>>;

/// Reduces `y` to a scalar through fixed random weights, so every output
/// element contributes with a distinct coefficient.
fn project(tape: &mut Tape<f64>, y: NodeId, c: &Tensor<f64>) -> Result<NodeId> {
    let ci = tape.constant(c.clone());
    let p = tape.mul(y, ci)?;
    Ok(tape.sum(p))
}

/// Inputs, projection weights and the recorded op for one random point.
struct OpCase {
    params: Vec<Tensor<f64>>,
    c: Tensor<f64>,
    build: Build,
}

fn op_case(name: &str, rng: &mut Rng) -> OpCase {
    let n = |rng: &mut Rng, d: &[usize]| -> Tensor<f64> { sample_normal(rng, d) };
    let c34 = n(rng, &[3, 4]);
    let unary = |f: fn(&mut Tape<f64>, NodeId) -> NodeId, a: Tensor<f64>, c: Tensor<f64>| OpCase {
        params: vec![a],
        c,
        build: Box::new(move |t: &mut Tape<f64>, ids: &[NodeId]| Ok(f(t, ids[0]))),
    };
    let binary = |f: fn(&mut Tape<f64>, NodeId, NodeId) -> Result<NodeId>,
                  a: Tensor<f64>,
                  b: Tensor<f64>,
                  c: Tensor<f64>| OpCase {
        params: vec![a, b],
        c,
        build: Box::new(move |t: &mut Tape<f64>, ids: &[NodeId]| f(t, ids[0], ids[1])),
    };
    match name {
        "matmul" => {
            let c = n(rng, &[3, 2]);
            binary(
                |t, a, b| t.matmul(a, b),
                n(rng, &[3, 4]),
                n(rng, &[4, 2]),
                c,
            )
        }
        "linear" => {
            let c = n(rng, &[5, 4]);
            OpCase {
                params: vec![n(rng, &[5, 3]), n(rng, &[4, 3]), n(rng, &[4])],
                c,
                build: Box::new(|t: &mut Tape<f64>, ids: &[NodeId]| {
                    t.linear(ids[0], ids[1], Some(ids[2]))
                }),
            }
        }
        "add" => binary(|t, a, b| t.add(a, b), n(rng, &[3, 4]), n(rng, &[3, 4]), c34),
        "sub" => binary(|t, a, b| t.sub(a, b), n(rng, &[3, 4]), n(rng, &[3, 4]), c34),
        "mul" => binary(|t, a, b| t.mul(a, b), n(rng, &[3, 4]), n(rng, &[3, 4]), c34),
        "scale" => unary(|t, a| t.scale(a, 1.7), n(rng, &[3, 4]), c34),
        "add_scalar" => unary(|t, a| t.add_scalar(a, 0.3), n(rng, &[3, 4]), c34),
        "neg" => unary(|t, a| t.neg(a), n(rng, &[3, 4]), c34),
        "square" => unary(|t, a| t.square(a), n(rng, &[3, 4]), c34),
        "softplus" => unary(|t, a| t.softplus(a), n(rng, &[3, 4]), c34),
        "tanh" => unary(|t, a| t.tanh(a), n(rng, &[3, 4]), c34),
        "relu" => unary(|t, a| t.relu(a), n(rng, &[3, 4]), c34),
        "leaky_relu" => unary(|t, a| t.leaky_relu(a, 0.2), n(rng, &[3, 4]), c34),
        "sum" => unary(
            |t, a| t.sum(a),
            n(rng, &[3, 4]),
            Tensor::scalar(rng.normal()),
        ),
        "mean" => unary(
            |t, a| t.mean(a),
            n(rng, &[3, 4]),
            Tensor::scalar(rng.normal()),
        ),
        "concat_rows" => {
            let c = n(rng, &[5, 3]);
            binary(
                |t, a, b| t.concat_rows(&[a, b]),
                n(rng, &[2, 3]),
                n(rng, &[3, 3]),
                c,
            )
        }
        "slice_rows" => {
            let c = n(rng, &[3, 3]);
            unary(
                |t, a| t.slice_rows(a, 1, 3).expect("rows 1..3 of 5"),
                n(rng, &[5, 3]),
                c,
            )
        }
        loss => {
            // "<loss>/<d_real|d_fake|gen>"
            let (l, which) = loss.split_once('/').expect("loss case");
            let kind: LossKind = l.parse().expect("loss name");
            let which = which.to_string();
            let y = tensor::scale(&n(rng, &[6, 1]), 2.0);
            OpCase {
                params: vec![y],
                c: n(rng, &[6, 1]),
                build: Box::new(move |t: &mut Tape<f64>, ids: &[NodeId]| {
                    Ok(match which.as_str() {
                        "d_real" => kind.record_d_real(t, ids[0]),
                        "d_fake" => kind.record_d_fake(t, ids[0]),
                        _ => kind.record_gen(t, ids[0]),
                    })
                }),
            }
        }
    }
}

/// Names of the op cases in [`fd_suite`].
pub fn fd_op_cases() -> Vec<String> {
    let mut v: Vec<String> = [
        "matmul",
        "linear",
        "add",
        "sub",
        "mul",
        "scale",
        "add_scalar",
        "neg",
        "square",
        "softplus",
        "tanh",
        "relu",
        "leaky_relu",
        "sum",
        "mean",
        "concat_rows",
        "slice_rows",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in LossKind::ALL {
        for w in ["d_real", "d_fake", "gen"] {
            v.push(format!("{l}/{w}"));
        }
    }
    v
}

fn check_op(name: &str, points: usize, h: f64, rng: &mut Rng) -> Result<FdCase> {
    let mut case = FdCase {
        name: name.to_string(),
        max_rel_err: 0.0,
        points: 0,
        redraws: 0,
    };
    while case.points < points {
        let op = op_case(name, rng);
        let rep = projected_difference_check(&op.params, &op.c, h, op.build)?;
        if rep.kink_margin.is_some_and(|m| m < KINK_MARGIN) {
            case.redraws += 1;
            if case.redraws > MAX_REDRAWS {
                return Err(Error::Oracle(format!("{name}: no kink-free point found")));
            }
            continue;
        }
        case.max_rel_err = case.max_rel_err.max(rep.max_rel_err);
        case.points += 1;
    }
    Ok(case)
}

/// Central differences over every parameter and input coordinate of an
/// MLP, scalarized by `sum(out ⊙ c)`. Relu-family networks are evaluated in
/// double-double. Returns (max rel. error, kink margin).
fn module_fd(
    m: &mut Mlp<f64>,
    x: &Tensor<f64>,
    c: &Tensor<f64>,
    h: f64,
    ctx: &ForwardCtx,
) -> Result<(f64, Option<f64>)> {
    let mut tape = Tape::new();
    let xi = tape.param(x.clone());
    let out = m.forward(&mut tape, xi, ctx)?;
    let root = project(&mut tape, out.output, c)?;
    let margin = tape.kink_margin();
    let grads = tape.backward(root)?;
    let mut analytic = vec![grads.get_or_zeros(xi, x)];
    for (&id, p) in out.params.iter().zip(m.params()) {
        analytic.push(grads.get_or_zeros(id, p));
    }

    let eval = |m: &mut Mlp<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let xi = t.constant(x.clone());
        let ctx = ForwardCtx {
            trainable: false,
            ..*ctx
        };
        let o = m.forward(&mut t, xi, &ctx)?;
        let r = project(&mut t, o.output, c)?;
        Ok(t.value(r).data()[0])
    };

    let mut worst = 0.0f64;
    let exact = exact::supported(m);
    let mut xw = x.clone();
    for i in 0..xw.len() {
        let fd = if exact {
            exact::central_difference(m, x, c, Coord::Input(i), h)
        } else {
            let v = xw.data()[i];
            xw.data_mut()[i] = v + h;
            let fp = eval(m, &xw)?;
            xw.data_mut()[i] = v - h;
            let fm = eval(m, &xw)?;
            xw.data_mut()[i] = v;
            (fp - fm) / (2.0 * h)
        };
        worst = worst.max(rel_err(fd, analytic[0].data()[i]));
    }
    let n_params = m.params().len();
    for k in 0..n_params {
        let len = m.params()[k].len();
        for i in 0..len {
            let fd = if exact {
                exact::central_difference(m, x, c, Coord::Param(k, i), h)
            } else {
                let v = m.params()[k].data()[i];
                m.params_mut()[k].data_mut()[i] = v + h;
                let fp = eval(m, x)?;
                m.params_mut()[k].data_mut()[i] = v - h;
                let fm = eval(m, x)?;
                m.params_mut()[k].data_mut()[i] = v;
                (fp - fm) / (2.0 * h)
            };
            worst = worst.max(rel_err(fd, analytic[k + 1].data()[i]));
        }
    }
    Ok((worst, margin.map(|m| m.abs())))
}

fn check_model(name: &str, points: usize, h: f64, rng: &mut Rng) -> Result<FdCase> {
    let mut case = FdCase {
        name: name.to_string(),
        max_rel_err: 0.0,
        points: 0,
        redraws: 0,
    };
    let batch = 4;
    while case.points < points {
        let (mut net, ctx): (Mlp<f64>, ForwardCtx) = match name {
            "generator" => (
                build_generator(&MlpSpec::new(Arch(vec![2, 8, 8, 2]), Activation::Relu), rng)?,
                ForwardCtx::default(),
            ),
            "discriminator" => (
                build_discriminator(
                    &MlpSpec::new(Arch(vec![2, 8, 8, 1]), Activation::Relu),
                    false,
                    rng,
                )?,
                ForwardCtx::default(),
            ),
            "discriminator_lrelu" => (
                build_discriminator(
                    &MlpSpec::new(Arch(vec![2, 8, 8, 1]), Activation::Lrelu),
                    false,
                    rng,
                )?,
                ForwardCtx::default(),
            ),
            "discriminator_tanh" => (
                build_discriminator(
                    &MlpSpec::new(Arch(vec![2, 8, 8, 1]), Activation::Tanh),
                    false,
                    rng,
                )?,
                ForwardCtx::default(),
            ),
            _ => {
                let spec = MlpSpec {
                    spectral: Some(1),
                    ..MlpSpec::new(Arch(vec![2, 8, 8, 1]), Activation::Lrelu)
                };
                let mut d = build_discriminator(&spec, false, rng)?;
                // σ̂ is held fixed under differentiation, so compare against the
                // function with a frozen estimate.
                let mut t = Tape::new();
                let xi = t.constant(Tensor::zeros(&[1, 2]));
                d.forward(&mut t, xi, &ForwardCtx::default())?;
                (
                    d,
                    ForwardCtx {
                        power: PowerIteration::Frozen,
                        ..ForwardCtx::default()
                    },
                )
            }
        };
        // Random biases so relu units are not all active at the origin.
        for layer in &mut net.layers {
            layer.bias = tensor::scale(&sample_normal(rng, layer.bias.dims()), 0.5);
        }
        let x: Tensor<f64> = sample_normal(rng, &[batch, net.input_width()]);
        let c: Tensor<f64> = sample_normal(rng, &[batch, net.output_width()]);
        let (err, margin) = module_fd(&mut net, &x, &c, h, &ctx)?;
        if margin.is_some_and(|m| m < KINK_MARGIN) {
            case.redraws += 1;
            if case.redraws > MAX_REDRAWS {
                return Err(Error::Oracle(format!("{name}: no kink-free point found")));
            }
            continue;
        }
        case.max_rel_err = case.max_rel_err.max(err);
        case.points += 1;
    }
    Ok(case)
}

/// Model builders in the configurations training uses.
pub const FD_MODEL_CASES: [&str; 4] = [
    "generator",
    "discriminator",
    "discriminator_lrelu",
    "discriminator_spectral",
];

/// Smooth discriminators. Their worst coordinates are limited by step-size
/// truncation rather than by the backward pass, so they are reported
/// without gating.
pub const FD_VARIANT_CASES: [&str; 1] = ["discriminator_tanh"];

/// Finite-difference check of every op case and model case at `points`
/// random points each.
pub fn fd_suite(points: usize, h: f64, seed: u64) -> Result<Vec<FdCase>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for name in fd_op_cases() {
        out.push(check_op(&name, points, h, &mut rng)?);
    }
    for name in FD_MODEL_CASES {
        out.push(check_model(name, points, h, &mut rng)?);
    }
    Ok(out)
}

/// The same check over [`FD_VARIANT_CASES`].
pub fn fd_variants(points: usize, h: f64, seed: u64) -> Result<Vec<FdCase>> {
    let mut rng = Rng::with_stream(seed, streams::EVAL);
    FD_VARIANT_CASES
        .iter()
        .map(|name| check_model(name, points, h, &mut rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub loss: LossKind,
    pub mode: Mode,
    pub trials: usize,
    /// max rel. error of ∂L_G/∂θ_G against the two-pass reference.
    pub g_rel_err: f64,
    /// max rel. error of ∂(L_D^R + L_D)/∂θ_D against the two-pass reference.
    pub d_rel_err: f64,
    /// Fake samples seen in the hinge dead zone `y < −1`.
    pub dead_zone_samples: usize,
}

impl EquivalenceReport {
    pub fn worst(&self) -> f64 {
        self.g_rel_err.max(self.d_rel_err)
    }
}

fn fake_outputs<T: Scalar>(gan: &mut Gan<T, Mlp<T>, Mlp<T>>, z: &Tensor<T>) -> Result<Tensor<T>> {
    let fake = gan.generate(z)?;
    let mut t = Tape::new();
    let fi = t.constant(fake);
    let ctx = ForwardCtx {
        trainable: false,
        param_grad_scale: None,
        power: PowerIteration::Frozen,
    };
    let out = gan.d.forward(&mut t, fi, &ctx)?;
    Ok(t.value(out.output).clone())
}

/// Shifts D's output bias so the median fake output sits at −1, putting
/// about half the fake batch in the hinge dead zone.
fn center_on_hinge<T: Scalar>(gan: &mut Gan<T, Mlp<T>, Mlp<T>>, z: &Tensor<T>) -> Result<()> {
    let y = fake_outputs(gan, z)?;
    let mut v: Vec<f64> = y.to_f64_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n.is_multiple_of(2) {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    } else {
        v[n / 2]
    };
    let last = gan.d.layers.last_mut().expect("non-empty");
    last.bias.data_mut()[0] = last.bias.data()[0] - T::of(median + 1.0);
    Ok(())
}

/// Fused gradients and their two-pass reference for one draw of `(x, z)`.
pub fn gradient_pair<T: Scalar>(
    config: &TrainConfig,
) -> Result<(StepGrads<T>, StepGrads<T>, usize)> {
    let mut gan = Gan::<T, Mlp<T>, Mlp<T>>::from_config(config)?;
    let mut batches = RingBatches::new(config.seed, config.ring);
    let x: Tensor<T> = batches.real(config.batch)?;
    let z: Tensor<T> = batches.latent(config.batch, config.latent_dim());
    if config.loss == LossKind::Hinge {
        center_on_hinge(&mut gan, &z)?;
    }
    let dead = fake_outputs(&mut gan, &z)?
        .data()
        .iter()
        .filter(|v| v.as_f64() < -1.0)
        .count();
    let fused = gan.simultaneous_grads(&x, &z)?;
    let reference = gan.two_pass_grads(&x, &z)?;
    Ok((fused, reference, dead))
}

/// Compares the single-pass gradients of `config.mode` against two explicit
/// passes with shared `z`, over `trials` seeds starting at `config.seed`.
pub fn equivalence_check<T: Scalar>(
    config: &TrainConfig,
    trials: usize,
) -> Result<EquivalenceReport> {
    if !matches!(config.mode, Mode::Fusedprop | Mode::Invfusedprop) {
        return Err(Error::Config(format!(
            "equivalence compares a fused mode with two passes, got {}",
            config.mode
        )));
    }
    let mut rep = EquivalenceReport {
        loss: config.loss,
        mode: config.mode,
        trials,
        g_rel_err: 0.0,
        d_rel_err: 0.0,
        dead_zone_samples: 0,
    };
    for t in 0..trials as u64 {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(t),
            ..config.clone()
        };
        let (fused, reference, dead) = gradient_pair::<T>(&cfg)?;
        rep.g_rel_err = rep.g_rel_err.max(tensor_rel_err(&fused.g, &reference.g)?);
        rep.d_rel_err = rep.d_rel_err.max(tensor_rel_err(&fused.d, &reference.d)?);
        rep.dead_zone_samples += dead;
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// Reported only; does not decide the outcome of a run.
    pub advisory: bool,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }

    /// Failed and counts against the run.
    pub fn failed(&self) -> bool {
        !self.advisory && !self.passed()
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<48} max rel err {:.3e} (tol {:.0e}){}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            if self.advisory { " advisory" } else { "" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub loss: LossKind,
    pub mode: Mode,
    pub dtype: DType,
    pub fd_points: usize,
    pub trials: usize,
    pub seed: u64,
    pub arch_g: Arch,
    pub arch_d: Arch,
    pub batch: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            loss: LossKind::NonSaturating,
            mode: Mode::Fusedprop,
            dtype: DType::F64,
            fd_points: 10,
            trials: 5,
            seed: 0,
            arch_g: Arch(vec![2, 64, 64, 2]),
            arch_d: Arch(vec![2, 64, 64, 1]),
            batch: 16,
        }
    }
}

impl GradcheckOptions {
    /// Tolerance of the fused-versus-two-pass comparison.
    pub fn equivalence_tolerance(&self) -> f64 {
        match self.dtype {
            DType::F64 => 1e-10,
            DType::F32 => 1e-4,
        }
    }

    fn train_config(&self, mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            loss: self.loss,
            dtype: self.dtype,
            seed: self.seed,
            arch_g: self.arch_g.clone(),
            arch_d: self.arch_d.clone(),
            batch: self.batch,
            ..TrainConfig::default()
        }
    }

    /// Fused modes exercised: the requested one, or every mode applicable to
    /// the loss when a two-pass mode was requested.
    fn fused_modes(&self) -> Vec<Mode> {
        match self.mode {
            Mode::Fusedprop | Mode::Invfusedprop => vec![self.mode],
            _ => [Mode::Fusedprop, Mode::Invfusedprop]
                .into_iter()
                .filter(|m| m.check_loss(self.loss).is_ok())
                .collect(),
        }
    }
}

/// Runs the full suite. Configuration errors (e.g. hinge with fusedprop)
/// are returned before any check runs.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<CheckLine>> {
    opts.mode.check_loss(opts.loss)?;
    for m in opts.fused_modes() {
        opts.train_config(m).validate()?;
    }
    let mut lines = Vec::new();
    if opts.fd_points > 0 {
        for case in fd_suite(opts.fd_points, 1e-4, opts.seed)? {
            lines.push(CheckLine {
                name: format!("finite differences: {}", case.name),
                value: case.max_rel_err,
                tolerance: 1e-6,
                advisory: false,
            });
        }
        for case in fd_variants(opts.fd_points, 1e-4, opts.seed)? {
            lines.push(CheckLine {
                name: format!("finite differences: {}", case.name),
                value: case.max_rel_err,
                tolerance: 1e-6,
                advisory: true,
            });
        }
    }
    for m in opts.fused_modes() {
        let cfg = opts.train_config(m);
        let rep = match opts.dtype {
            DType::F32 => equivalence_check::<f32>(&cfg, opts.trials)?,
            DType::F64 => equivalence_check::<f64>(&cfg, opts.trials)?,
        };
        lines.push(CheckLine {
            name: format!(
                "{m} vs two-pass, {} ({} dead-zone samples)",
                opts.loss, rep.dead_zone_samples
            ),
            value: rep.worst(),
            tolerance: opts.equivalence_tolerance(),
            advisory: false,
        });
    }
    let id = verify_scaling_identity(
        opts.loss,
        10_000,
        &mut Rng::with_stream(opts.seed, streams::EVAL),
    )?;
    lines.push(CheckLine {
        name: format!("scaling identities, {}", opts.loss),
        value: id.worst(),
        tolerance: 1e-9,
        advisory: false,
    });
    Ok(lines)
}
