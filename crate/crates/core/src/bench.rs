//! Wall-clock throughput of the training modes and the speedup model.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, Mlp, Module};
use crate::rng::{streams, Rng};
use crate::sample_normal;
use crate::tensor::{DType, Scalar, Tensor};
use crate::train::{Gan, Mode, RingBatches, TrainConfig};

/// Untimed warmup iterations, then `repeats` timed blocks of `block_iters`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSettings {
    pub warmup: usize,
    pub repeats: usize,
    pub block_iters: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            warmup: 20,
            repeats: 7,
            block_iters: 100,
        }
    }
}

impl BenchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < 10 || self.repeats < 5 || self.block_iters == 0 {
            return Err(Error::Config(format!(
                "benchmark needs warmup ≥ 10, repeats ≥ 5 and a non-empty block, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTiming {
    /// Median over blocks of iterations per second.
    pub iters_per_sec: f64,
    pub block_rates: Vec<f64>,
    /// Seed actually timed; differs from the config's after a divergence.
    pub seed: u64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if !n.is_multiple_of(2) {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A warmed-up training loop that can run timed blocks.
trait Stepper {
    fn run(&mut self, iters: usize) -> Result<()>;
}

struct GanStepper<T: Scalar> {
    gan: Gan<T, Mlp<T>, Mlp<T>>,
    batches: RingBatches,
    batch: usize,
}

impl<T: Scalar> Stepper for GanStepper<T> {
    fn run(&mut self, iters: usize) -> Result<()> {
        for _ in 0..iters {
            self.gan.step(&mut self.batches, self.batch)?;
        }
        Ok(())
    }
}

fn warm_stepper(config: &TrainConfig, warmup: usize) -> Result<Box<dyn Stepper>> {
    fn typed<T: Scalar + 'static>(config: &TrainConfig, warmup: usize) -> Result<Box<dyn Stepper>> {
        let mut s = GanStepper {
            gan: Gan::<T, Mlp<T>, Mlp<T>>::from_config(config)?,
            batches: RingBatches::new(config.seed, config.ring),
            batch: config.batch,
        };
        s.run(warmup)?;
        Ok(Box::new(s))
    }
    match config.dtype {
        DType::F32 => typed::<f32>(config, warmup),
        DType::F64 => typed::<f64>(config, warmup),
    }
}

/// One mode under measurement; a divergence re-seeds it once.
struct Timed {
    config: TrainConfig,
    stepper: Box<dyn Stepper>,
    reseeded: bool,
    rates: Vec<f64>,
}

impl Timed {
    fn new(config: &TrainConfig, settings: &BenchSettings) -> Result<Self> {
        let mut t = Timed {
            config: config.clone(),
            stepper: Box::new(NoStepper),
            reseeded: false,
            rates: Vec::with_capacity(settings.repeats),
        };
        match warm_stepper(config, settings.warmup) {
            Ok(s) => t.stepper = s,
            Err(Error::Divergence { .. }) => t.reseed(settings)?,
            Err(e) => return Err(e),
        }
        Ok(t)
    }

    fn reseed(&mut self, settings: &BenchSettings) -> Result<()> {
        if self.reseeded {
            return Err(Error::Divergence {
                iter: 0,
                detail: format!("{} diverged under two seeds", self.config.mode),
            });
        }
        self.reseeded = true;
        self.config.seed = self.config.seed.wrapping_add(1);
        self.rates.clear();
        self.stepper = warm_stepper(&self.config, settings.warmup)?;
        Ok(())
    }

    fn block(&mut self, settings: &BenchSettings) -> Result<()> {
        loop {
            let t = Instant::now();
            match self.stepper.run(settings.block_iters) {
                Ok(()) => {
                    self.rates
                        .push(settings.block_iters as f64 / t.elapsed().as_secs_f64());
                    return Ok(());
                }
                Err(Error::Divergence { .. }) => self.reseed(settings)?,
                Err(e) => return Err(e),
            }
        }
    }
}

struct NoStepper;

impl Stepper for NoStepper {
    fn run(&mut self, _: usize) -> Result<()> {
        Ok(())
    }
}

/// Times all configs with their blocks interleaved, so drift in machine
/// load hits every mode alike.
fn time_interleaved(configs: &[TrainConfig], settings: &BenchSettings) -> Result<Vec<ModeTiming>> {
    settings.validate()?;
    let mut timed = configs
        .iter()
        .map(|c| {
            c.validate()?;
            Timed::new(c, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    while timed.iter().any(|t| t.rates.len() < settings.repeats) {
        for t in timed
            .iter_mut()
            .filter(|t| t.rates.len() < settings.repeats)
        {
            t.block(settings)?;
        }
    }
    Ok(timed
        .into_iter()
        .map(|t| ModeTiming {
            iters_per_sec: median(t.rates.clone()),
            block_rates: t.rates,
            seed: t.config.seed,
        })
        .collect())
}

/// Iterations per second of `config`, end to end including data and
/// latent sampling. A divergence re-seeds once before failing.
pub fn time_mode(config: &TrainConfig, settings: &BenchSettings) -> Result<ModeTiming> {
    let mut v = time_interleaved(std::slice::from_ref(config), settings)?;
    Ok(v.remove(0))
}

fn forward_seconds<T: Scalar>(
    net: &mut Mlp<T>,
    batch: usize,
    settings: &BenchSettings,
) -> Result<f64> {
    let x: Tensor<T> = sample_normal(&mut Rng::new(0), &[batch, net.input_width()]);
    let once = |net: &mut Mlp<T>| -> Result<()> {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        net.forward(&mut tape, xi, &ForwardCtx::default())?;
        Ok(())
    };
    for _ in 0..settings.warmup {
        once(net)?;
    }
    let mut per_pass = Vec::with_capacity(settings.repeats);
    for _ in 0..settings.repeats {
        let t = Instant::now();
        for _ in 0..settings.block_iters {
            once(net)?;
        }
        per_pass.push(t.elapsed().as_secs_f64() / settings.block_iters as f64);
    }
    Ok(median(per_pass))
}

/// Measured single forward-pass times (T̂_D, T̂_G) in seconds.
pub fn pass_times(config: &TrainConfig, settings: &BenchSettings) -> Result<(f64, f64)> {
    fn typed<T: Scalar>(config: &TrainConfig, s: &BenchSettings) -> Result<(f64, f64)> {
        let mut g: Mlp<T> = crate::nn::build_generator(
            &config.generator_spec(),
            &mut Rng::with_stream(config.seed, streams::INIT_G),
        )?;
        let mut d: Mlp<T> = crate::nn::build_discriminator(
            &config.discriminator_spec(),
            false,
            &mut Rng::with_stream(config.seed, streams::INIT_D),
        )?;
        Ok((
            forward_seconds(&mut d, config.batch, s)?,
            forward_seconds(&mut g, config.batch, s)?,
        ))
    }
    match config.dtype {
        DType::F32 => typed::<f32>(config, settings),
        DType::F64 => typed::<f64>(config, settings),
    }
}

/// Operation-count speedup of fused over conventional when parameter and
/// activation gradients run in parallel: (6T_D + 3T_G)/(4T_D + 2T_G).
pub fn parallel_model(t_d: f64, t_g: f64) -> f64 {
    (6.0 * t_d + 3.0 * t_g) / (4.0 * t_d + 2.0 * t_g)
}

/// Same with parameter and activation gradients serial: (8T_D + 4T_G)/(6T_D + 3T_G).
pub fn serial_model(t_d: f64, t_g: f64) -> f64 {
    (8.0 * t_d + 4.0 * t_g) / (6.0 * t_d + 3.0 * t_g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub loss: String,
    /// `G-arch|D-arch`.
    pub arch: String,
    pub batch: usize,
    pub dtype: DType,
    pub iters_per_sec: f64,
    pub warmup: usize,
    pub repeats: usize,
    /// Median over interleaved blocks of this rate over the conventional
    /// rate, when conventional was measured.
    pub ratio_vs_conventional: Option<f64>,
    /// Predicted ratio over conventional under the parallel model.
    pub model_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// Shared setting of all timed configs, with the first config's mode.
    pub config: TrainConfig,
    pub settings: BenchSettings,
    pub results: Vec<ModeResult>,
    pub t_d: f64,
    pub t_g: f64,
    pub parallel_prediction: f64,
    pub serial_prediction: f64,
}

fn setting_key(c: &TrainConfig) -> TrainConfig {
    TrainConfig {
        mode: Mode::Conventional,
        ..c.clone()
    }
}

/// Times every config and reports rates and ratios. All configs must differ
/// only in mode.
pub fn speedup_report(configs: &[TrainConfig], settings: &BenchSettings) -> Result<BenchReport> {
    if configs.len() < 2 {
        return Err(Error::Config(
            "speedup report needs at least two modes".into(),
        ));
    }
    mode_report(configs, settings)
}

/// [`speedup_report`] that also accepts a single mode, reported without a ratio
/// unless conventional is among the configs.
pub fn mode_report(configs: &[TrainConfig], settings: &BenchSettings) -> Result<BenchReport> {
    if configs.is_empty() {
        return Err(Error::Config("no modes to benchmark".into()));
    }
    let key = setting_key(&configs[0]);
    for c in &configs[1..] {
        if setting_key(c) != key {
            return Err(Error::Config(format!(
                "benchmark settings differ between {} and {}; only the mode may vary",
                configs[0].mode, c.mode
            )));
        }
    }
    for (i, c) in configs.iter().enumerate() {
        if configs[..i].iter().any(|p| p.mode == c.mode) {
            return Err(Error::Config(format!("mode {} requested twice", c.mode)));
        }
        c.validate()?;
    }
    let (t_d, t_g) = pass_times(&configs[0], settings)?;
    let parallel = parallel_model(t_d, t_g);
    let timings = time_interleaved(configs, settings)?;
    let base = configs
        .iter()
        .position(|c| c.mode == Mode::Conventional)
        .map(|i| timings[i].block_rates.clone());
    let mut results = Vec::with_capacity(configs.len());
    for (c, timing) in configs.iter().zip(timings) {
        let ratio = base.as_ref().map(|b| {
            median(
                timing
                    .block_rates
                    .iter()
                    .zip(b)
                    .map(|(r, b)| r / b)
                    .collect(),
            )
        });
        results.push(ModeResult {
            mode: c.mode,
            loss: c.loss.to_string(),
            arch: format!("{}|{}", c.arch_g, c.arch_d),
            batch: c.batch,
            dtype: c.dtype,
            iters_per_sec: timing.iters_per_sec,
            warmup: settings.warmup,
            repeats: settings.repeats,
            ratio_vs_conventional: ratio,
            model_prediction: match c.mode {
                Mode::Fusedprop | Mode::Invfusedprop => parallel,
                Mode::Conventional | Mode::Simgd2pass => 1.0,
            },
        });
    }
    Ok(BenchReport {
        config: configs[0].clone(),
        settings: *settings,
        results,
        t_d,
        t_g,
        parallel_prediction: parallel,
        serial_prediction: serial_model(t_d, t_g),
    })
}

impl BenchReport {
    pub fn result(&self, mode: Mode) -> Option<&ModeResult> {
        self.results.iter().find(|r| r.mode == mode)
    }

    pub fn ratio(&self, mode: Mode) -> Option<f64> {
        self.result(mode).and_then(|r| r.ratio_vs_conventional)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:<12} {:<22} {:>5} {:>5} {:>12} {:>10} {:>10}",
            "mode", "loss", "arch", "batch", "dtype", "iters/sec", "ratio", "model"
        );
        for r in &self.results {
            let ratio = r
                .ratio_vs_conventional
                .map_or_else(|| "-".to_string(), |v| format!("{v:.3}x"));
            let _ = writeln!(
                s,
                "{:<14} {:<12} {:<22} {:>5} {:>5} {:>12.1} {:>10} {:>9.3}x",
                r.mode.name(),
                r.loss,
                r.arch,
                r.batch,
                r.dtype,
                r.iters_per_sec,
                ratio,
                r.model_prediction
            );
        }
        let _ = writeln!(
            s,
            "T_D = {:.3e} s, T_G = {:.3e} s per forward; model speedup {:.3}x (parallel gradients), {:.3}x (serial)",
            self.t_d, self.t_g, self.parallel_prediction, self.serial_prediction
        );
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# fusedprop {}", crate::VERSION)?;
        let config = serde_json::to_string(&self.config).map_err(|e| Error::Io(e.to_string()))?;
        let settings =
            serde_json::to_string(&self.settings).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "# config {config}")?;
        writeln!(out, "# settings {settings}")?;
        writeln!(
            out,
            "# t_d={:e} t_g={:e} parallel_model={} serial_model={}",
            self.t_d, self.t_g, self.parallel_prediction, self.serial_prediction
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode",
            "loss",
            "arch",
            "batch",
            "dtype",
            "iters_per_sec",
            "ratio_vs_conventional",
            "model_prediction",
        ])?;
        for r in &self.results {
            w.write_record([
                r.mode.name().to_string(),
                r.loss.clone(),
                r.arch.clone(),
                r.batch.to_string(),
                r.dtype.to_string(),
                format!("{:.3}", r.iters_per_sec),
                r.ratio_vs_conventional
                    .map_or(String::new(), |v| format!("{v:.4}")),
                format!("{:.4}", r.model_prediction),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
