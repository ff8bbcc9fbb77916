//! Subcommand bodies. Each returns the process exit status.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use fusedprop::bench::{mode_report, BenchSettings};
use fusedprop::losses::LossKind;
use fusedprop::tensor::write_tensor;
use fusedprop::train::{run_training, write_metrics_csv, Mode, RunSummary, TrainConfig};
use fusedprop::verify::{gradient_pair, run_gradcheck, GradcheckOptions};
use fusedprop::{DType, Scalar};
use serde::Serialize;

use crate::output::{echo, sidecar_path, with_suffix, write_file};
use crate::plot::scatter_svg;
use crate::{BenchArgs, GradcheckArgs, LossesArgs, TrainArgs, EXIT_CHECK, EXIT_DIVERGENCE};

#[derive(Serialize)]
struct GradcheckEcho {
    loss: LossKind,
    mode: Mode,
    dtype: DType,
    fd_points: usize,
    fd_step: f64,
    trials: usize,
    seed: u64,
    arch_g: String,
    arch_d: String,
    batch: usize,
    dump_grads: Option<String>,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let opts = GradcheckOptions {
        loss: a.loss,
        mode: a.mode,
        dtype: a.dtype,
        fd_points: a.fd_points,
        trials: a.trials,
        seed: a.seed,
        arch_g: a.arch_g.clone(),
        arch_d: a.arch_d.clone(),
        batch: a.batch,
    };
    let settings = GradcheckEcho {
        loss: a.loss,
        mode: a.mode,
        dtype: a.dtype,
        fd_points: a.fd_points,
        fd_step: 1e-4,
        trials: a.trials,
        seed: a.seed,
        arch_g: a.arch_g.to_string(),
        arch_d: a.arch_d.to_string(),
        batch: a.batch,
        dump_grads: a.dump_grads.as_ref().map(|p| p.display().to_string()),
    };
    echo("gradcheck", &settings, &a.out)?;
    let lines = run_gradcheck(&opts)?;
    let mut report = format!(
        "# fusedprop {}\n# config {}\n",
        fusedprop::VERSION,
        serde_json::to_string(&settings)?
    );
    for line in &lines {
        println!("{line}");
        report.push_str(&format!("{line}\n"));
    }
    write_file(&a.out, &report)?;
    if let Some(path) = &a.dump_grads {
        dump_grads(&opts, path)?;
    }
    let failed: Vec<_> = lines.iter().filter(|l| l.failed()).collect();
    if failed.is_empty() {
        return Ok(0);
    }
    for l in failed {
        eprintln!(
            "check failed: {} (max rel err {:.3e} > {:.0e})",
            l.name, l.value, l.tolerance
        );
    }
    Ok(EXIT_CHECK)
}

fn dump_grads(opts: &GradcheckOptions, path: &Path) -> Result<()> {
    let mode = match opts.mode {
        Mode::Fusedprop | Mode::Invfusedprop => opts.mode,
        _ if opts.loss.has_lambda() => Mode::Fusedprop,
        _ => Mode::Invfusedprop,
    };
    let config = TrainConfig {
        mode,
        loss: opts.loss,
        dtype: opts.dtype,
        seed: opts.seed,
        arch_g: opts.arch_g.clone(),
        arch_d: opts.arch_d.clone(),
        batch: opts.batch,
        ..TrainConfig::default()
    };
    let mut out =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    match opts.dtype {
        DType::F32 => write_pair::<f32>(&config, &mut out)?,
        DType::F64 => write_pair::<f64>(&config, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn write_pair<T: Scalar>(config: &TrainConfig, out: &mut impl Write) -> Result<()> {
    let (fused, reference, _) = gradient_pair::<T>(config)?;
    for t in fused
        .d
        .iter()
        .chain(&fused.g)
        .chain(&reference.d)
        .chain(&reference.g)
    {
        write_tensor(out, t)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    config: &'a TrainConfig,
    metrics: String,
    plot: Option<String>,
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let mut base = a.config.resolve(TrainConfig::default())?;
    if let Some(m) = a.mode.mode {
        base.mode = m;
    }
    let runs: Vec<(TrainConfig, String)> = match a.sweep_seeds {
        None => vec![(base.clone(), String::new())],
        Some(0) => {
            return Err(fusedprop::Error::Config("--sweep-seeds needs at least 1".into()).into())
        }
        Some(n) => (0..n as u64)
            .map(|k| {
                let seed = base.seed.wrapping_add(k);
                (
                    TrainConfig {
                        seed,
                        ..base.clone()
                    },
                    format!("-seed{seed}"),
                )
            })
            .collect(),
    };
    let mut diverged = false;
    let mut covered = Vec::new();
    for (config, suffix) in &runs {
        let metrics = with_suffix(&a.out, suffix);
        let plot = a.plot.as_ref().map(|p| with_suffix(p, suffix));
        echo(
            "train",
            &TrainEcho {
                config,
                metrics: metrics.display().to_string(),
                plot: plot.as_ref().map(|p| p.display().to_string()),
            },
            &metrics,
        )?;
        let summary = run_training(config)?;
        write_outputs(&summary, &metrics, plot.as_deref())?;
        match &summary.failure {
            Some(f) => {
                diverged = true;
                eprintln!(
                    "seed {}: diverged at iteration {}: {}",
                    config.seed, f.iter, f.detail
                );
            }
            None => {
                covered.push(summary.coverage.covered);
                println!(
                    "seed {}: modes_covered {}/{} hq_fraction {:.3}",
                    config.seed,
                    summary.coverage.covered,
                    config.ring.modes,
                    summary.coverage.hq_fraction
                );
            }
        }
    }
    if runs.len() > 1 && !covered.is_empty() {
        covered.sort_unstable();
        println!(
            "{} of {} seeds finished; median modes_covered {}",
            covered.len(),
            runs.len(),
            covered[covered.len() / 2]
        );
    }
    Ok(if diverged { EXIT_DIVERGENCE } else { 0 })
}

fn write_outputs(summary: &RunSummary, metrics: &Path, plot: Option<&Path>) -> Result<()> {
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &summary.config, &summary.rows)?;
    write_file(metrics, &String::from_utf8(csv)?)?;
    if let Some(f) = &summary.failure {
        let mut path = sidecar_path(metrics).into_os_string();
        path = path
            .to_string_lossy()
            .replace(".config.json", ".failure.json")
            .into();
        write_file(Path::new(&path), &(serde_json::to_string_pretty(f)? + "\n"))?;
    }
    if let Some(p) = plot {
        let c = &summary.config;
        let title = format!(
            "{} {} seed {}: {}/{} modes, hq {:.2}",
            c.mode,
            c.loss,
            c.seed,
            summary.coverage.covered,
            c.ring.modes,
            summary.coverage.hq_fraction
        );
        write_file(p, &scatter_svg(&summary.samples, &c.ring, c, &title))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchEcho<'a> {
    config: &'a TrainConfig,
    modes: &'a [Mode],
    settings: BenchSettings,
}

pub fn bench(a: &BenchArgs) -> Result<u8> {
    let base = a.config.resolve(TrainConfig {
        dtype: DType::F32,
        ..TrainConfig::default()
    })?;
    let settings = BenchSettings {
        warmup: a.warmup,
        repeats: a.repeats,
        block_iters: a.block_iters,
    };
    echo(
        "bench",
        &BenchEcho {
            config: &base,
            modes: &a.modes,
            settings,
        },
        &a.out,
    )?;
    settings.validate()?;
    let configs: Vec<TrainConfig> = a
        .modes
        .iter()
        .map(|&mode| TrainConfig {
            mode,
            ..base.clone()
        })
        .collect();
    let report = mode_report(&configs, &settings)?;
    print!("{}", report.to_table());
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&a.out, &String::from_utf8(csv)?)?;
    Ok(0)
}

pub fn losses(a: &LossesArgs) -> Result<u8> {
    println!(
        "{:<12} {:<12} {:<12} {:<12} {:<12} {:<12}",
        "loss", "L_D^R", "L_D", "L_G", "lambda", "lambda_inv"
    );
    for (kind, row) in LossKind::ALL.iter().zip(FORMULAS) {
        println!(
            "{:<12} {:<12} {:<12} {:<12} {:<12} {:<12}",
            kind.name(),
            row[0],
            row[1],
            row[2],
            row[3],
            row[4]
        );
    }
    if !a.at.is_empty() {
        println!();
        println!(
            "{:<12} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "loss", "y", "L_D^R", "L_D", "L_G", "lambda", "lambda_inv"
        );
        for kind in LossKind::ALL {
            for &y in &a.at {
                let show = |r: fusedprop::Result<f64>| {
                    r.map_or_else(|_| "-".to_string(), |v| format!("{v:.6}"))
                };
                println!(
                    "{:<12} {:>10} {:>12.6} {:>12.6} {:>12.6} {:>12} {:>12}",
                    kind.name(),
                    y,
                    kind.d_real(y),
                    kind.d_fake(y),
                    kind.gen(y),
                    show(kind.lambda_at(y, 0)),
                    show(kind.lambda_inv_at(y, 0))
                );
            }
        }
    }
    Ok(0)
}

/// Closed forms in the order of [`LossKind::ALL`]; `sp` is softplus and
/// `H` the Heaviside step with `H(0) = 0`.
const FORMULAS: [[&str; 5]; 5] = [
    ["sp(-y)", "sp(y)", "-sp(y)", "-1", "-1"],
    ["sp(-y)", "sp(y)", "sp(-y)", "-exp(-y)", "-exp(y)"],
    ["-y", "y", "-y", "-1", "-1"],
    ["(y-1)^2", "y^2", "(y-1)^2", "1-1/y", "y/(y-1)"],
    ["relu(1-y)", "relu(1+y)", "-y", "none", "-H(y+1)"],
];
