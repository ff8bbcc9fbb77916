//! Full training runs and the metrics CSV.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::config::TrainConfig;
use super::data::{mode_coverage, Coverage};
use super::gan::{Gan, RingBatches, StepStats};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::{streams, Rng};
use crate::sample_normal;
use crate::tensor::{DType, Scalar, Tensor};

pub const METRICS_HEADER: [&str; 9] = [
    "iter",
    "loss_d_real",
    "loss_d_fake",
    "loss_g",
    "y_real_mean",
    "y_fake_mean",
    "modes_covered",
    "hq_fraction",
    "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss_d_real: f64,
    pub loss_d_fake: f64,
    pub loss_g: f64,
    pub y_real_mean: f64,
    pub y_fake_mean: f64,
    pub modes_covered: usize,
    pub hq_fraction: f64,
    pub wall_ms: f64,
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub iter: usize,
    pub detail: String,
    /// Losses of the last completed iteration, if any.
    pub last_stats: Option<StepStatsRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStatsRecord {
    pub loss_d_real: f64,
    pub loss_d_fake: f64,
    pub loss_g: f64,
}

impl From<StepStats> for StepStatsRecord {
    fn from(s: StepStats) -> Self {
        StepStatsRecord {
            loss_d_real: s.loss_d_real,
            loss_d_fake: s.loss_d_fake,
            loss_g: s.loss_g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub rows: Vec<MetricsRow>,
    /// Generator samples at the end of the run (or at the failure point).
    pub samples: Vec<[f64; 2]>,
    pub coverage: Coverage,
    pub failure: Option<FailureRecord>,
}

impl RunSummary {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }
}

fn evaluate<T: Scalar>(
    gan: &mut Gan<T, Mlp<T>, Mlp<T>>,
    z_eval: &Tensor<T>,
    config: &TrainConfig,
) -> Result<(Tensor<T>, Coverage)> {
    let samples = gan.generate(z_eval)?;
    let coverage = mode_coverage(&samples, &config.ring)?;
    Ok((samples, coverage))
}

fn run_typed<T: Scalar>(config: &TrainConfig) -> Result<RunSummary> {
    let mut gan = Gan::<T, Mlp<T>, Mlp<T>>::from_config(config)?;
    let mut batches = RingBatches::new(config.seed, config.ring);
    let z_eval: Tensor<T> = sample_normal(
        &mut Rng::with_stream(config.seed, streams::EVAL),
        &[config.eval_samples, config.latent_dim()],
    );
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut failure = None;
    let mut last: Option<StepStats> = None;
    for i in 0..config.iters {
        let stats = match gan.step(&mut batches, config.batch) {
            Ok(s) => s,
            Err(Error::Divergence { iter, detail }) => {
                failure = Some(FailureRecord {
                    iter,
                    detail,
                    last_stats: last.map(Into::into),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        last = Some(stats);
        let done = i + 1;
        if done % config.log_every == 0 || done == config.iters {
            let (_, cov) = evaluate(&mut gan, &z_eval, config)?;
            rows.push(MetricsRow {
                iter: done,
                loss_d_real: stats.loss_d_real,
                loss_d_fake: stats.loss_d_fake,
                loss_g: stats.loss_g,
                y_real_mean: stats.y_real_mean,
                y_fake_mean: stats.y_fake_mean,
                modes_covered: cov.covered,
                hq_fraction: cov.hq_fraction,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    let (samples, coverage) = evaluate(&mut gan, &z_eval, config)?;
    let samples = (0..samples.rows())
        .map(|i| {
            let r = samples.row(i);
            [r[0].as_f64(), r[1].as_f64()]
        })
        .collect();
    Ok(RunSummary {
        config: config.clone(),
        rows,
        samples,
        coverage,
        failure,
    })
}

/// Runs `config` to completion or divergence. Divergence is reported in
/// [`RunSummary::failure`]; other errors are returned.
pub fn run_training(config: &TrainConfig) -> Result<RunSummary> {
    config.validate()?;
    match config.dtype {
        DType::F32 => run_typed::<f32>(config),
        DType::F64 => run_typed::<f64>(config),
    }
}

/// Writes the metrics CSV, preceded by `#` lines carrying the version and
/// the resolved config.
pub fn write_metrics_csv<W: Write>(
    mut out: W,
    config: &TrainConfig,
    rows: &[MetricsRow],
) -> Result<()> {
    writeln!(out, "# fusedprop {}", crate::VERSION)?;
    let json = serde_json::to_string(config).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out, "# config {json}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.loss_d_real.to_string(),
            r.loss_d_fake.to_string(),
            r.loss_g.to_string(),
            r.y_real_mean.to_string(),
            r.y_fake_mean.to_string(),
            r.modes_covered.to_string(),
            r.hq_fraction.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;

    fn small() -> TrainConfig {
        TrainConfig {
            arch_g: Arch(vec![2, 8, 2]),
            arch_d: Arch(vec![2, 8, 1]),
            batch: 8,
            iters: 25,
            log_every: 10,
            eval_samples: 64,
            ..TrainConfig::default()
        }
    }

    fn strip_wall(csv: &str) -> String {
        csv.lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn rows_at_interval_and_end() {
        let s = run_training(&small()).unwrap();
        let iters: Vec<usize> = s.rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![10, 20, 25]);
        assert_eq!(s.samples.len(), 64);
        assert!(s.failure.is_none());
    }

    #[test]
    fn csv_is_reproducible() {
        let cfg = small();
        let render = || {
            let s = run_training(&cfg).unwrap();
            let mut buf = Vec::new();
            write_metrics_csv(&mut buf, &cfg, &s.rows).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let (a, b) = (render(), render());
        assert!(a.starts_with("# fusedprop "));
        assert!(a.contains(&METRICS_HEADER.join(",")));
        assert_eq!(strip_wall(&a), strip_wall(&b));
    }

    #[test]
    fn f32_runs() {
        let s = run_training(&TrainConfig {
            dtype: DType::F32,
            ..small()
        })
        .unwrap();
        assert_eq!(s.rows.len(), 3);
    }
}
