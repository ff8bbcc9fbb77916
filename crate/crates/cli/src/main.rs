//! `fusedprop` command line: gradient checks, training, benchmarks and the
//! loss table.

mod commands;
mod config_args;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusedprop::losses::LossKind;
use fusedprop::nn::Arch;
use fusedprop::train::Mode;
use fusedprop::DType;
use mimalloc::MiMalloc;

use config_args::{ConfigArgs, ModeArg};

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

/// Exit status for a failed check.
pub const EXIT_CHECK: u8 = 1;
/// Exit status for an invalid configuration.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for a numeric divergence.
pub const EXIT_DIVERGENCE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fusedprop",
    version,
    about = "Single-pass GAN training: gradient checks, training and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference, fused-versus-two-pass and scaling-identity checks.
    Gradcheck(GradcheckArgs),
    /// Train on the ring of Gaussians and write a metrics CSV.
    Train(TrainArgs),
    /// Time training modes under matched settings.
    Bench(BenchArgs),
    /// Print the loss table with λ and λ⁻¹.
    Losses(LossesArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "ns")]
    pub loss: LossKind,
    /// A two-pass mode checks every single-pass mode the loss supports.
    #[arg(long, default_value = "fusedprop")]
    pub mode: Mode,
    #[arg(long, default_value = "f64")]
    pub dtype: DType,
    /// Random points per finite-difference case; 0 skips them.
    #[arg(long, default_value_t = 10)]
    pub fd_points: usize,
    /// Seeds for the equivalence comparison.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "2-64-64-2")]
    pub arch_g: Arch,
    #[arg(long, default_value = "2-64-64-1")]
    pub arch_d: Arch,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Report file; the resolved settings go to `<PATH>.config.json`.
    #[arg(long, default_value = "gradcheck.txt")]
    pub out: PathBuf,
    /// Write FPT1 tensors for the first seed: single-pass D gradients,
    /// single-pass G gradients, then the two-pass D and G gradients.
    #[arg(long, value_name = "PATH")]
    pub dump_grads: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Metrics CSV; the resolved config goes to `<PATH>.config.json`.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// SVG scatter of the final generator samples.
    #[arg(long, value_name = "PATH")]
    pub plot: Option<PathBuf>,
    /// Run seeds `seed..seed+N`, each to its own `-seed<k>` files.
    #[arg(long, value_name = "N")]
    pub sweep_seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated modes to time.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "conventional,fusedprop,invfusedprop"
    )]
    pub modes: Vec<Mode>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,
    /// Iterations per timed block.
    #[arg(long, default_value_t = 100)]
    pub block_iters: usize,
    /// Report CSV; the resolved settings go to `<PATH>.config.json`.
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    /// Also evaluate every loss, λ and λ⁻¹ at these outputs.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Vec<f64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<fusedprop::Error>() {
        Some(e) if e.is_config() => EXIT_CONFIG,
        Some(e) if e.is_numeric() => EXIT_DIVERGENCE,
        _ => EXIT_CHECK,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Train(a) => commands::train(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Losses(a) => commands::losses(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
