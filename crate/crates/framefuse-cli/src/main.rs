//! `framefuse` command line: dataset generation, training, retrieval
//! evaluation, gradient checking and diagnostic CSV dumps over one
//! JSON run configuration.
//!
//! Every subcommand is deterministic given `--seed`. Exit code 0 means
//! every internal assertion passed; failures print one machine-parsable
//! `error: ...` line on stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod run;

#[derive(Parser)]
#[command(
    name = "framefuse",
    version,
    about = "Frame-feature aggregation trainer and evaluation harness",
    after_help = "Config keys and their defaults are documented under each subcommand's --help."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration (unknown keys are rejected).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `out` path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset (writes FEAT files plus
    /// manifest.json under `out`).
    ///
    /// Config: `synth` section {pairs=64, dim=32, frames_min=8,
    /// frames_max=16, separation=4.0, noise=0.3, irrelevant_frac=0.25,
    /// seed=0}; `out` directory required.
    GenData(CommonArgs),
    /// Train the configured calculator on a dataset manifest; writes
    /// `checkpoint.json` and `train_log.csv` under `out`.
    ///
    /// Config: `calculator` (required), `dataset` (required), `out`
    /// directory (required), epochs=5, batch_size=128,
    /// learning_rate=1e-4, temperature=0.05 (fixed unless
    /// learnable_temperature=true), frames=12, dim=32, seed=0,
    /// early_stop_t2v_r1 unset.
    Train(CommonArgs),
    /// Evaluate retrieval metrics in both directions.
    ///
    /// Config: `dataset` (required) plus `checkpoint` (or `calculator`
    /// to evaluate a fresh seeded init); `normalize` defaults to true
    /// (cosine scoring; the tight calculator scores pairs directly).
    /// Ranking ties are optimistic: rank = 1 + count(strictly greater).
    /// Writes the report CSV to `out`, or stdout when unset.
    Eval(CommonArgs),
    /// Finite-difference gradient check of the configured calculator's
    /// batch loss on a random synthetic batch.
    ///
    /// Config: `calculator` (required); `grad_check` section
    /// {h=1e-5, tol=1e-4, batch=3}; frames=12, dim=32, seed=0.
    /// Exits nonzero if any relative error exceeds the tolerance.
    GradCheck(CommonArgs),
    /// Dump per-frame gate weights (`video_id,frame_index,stage,weight`)
    /// for every video in the dataset.
    ///
    /// Config: `checkpoint` (or `calculator` for a seeded init),
    /// `dataset` (required). Errors when the calculator has no gates.
    DumpWeights(CommonArgs),
    /// Per-video caption-frame similarity audit
    /// (`video_id,frame_len,min_sim,max_sim,meanp_sim`).
    ///
    /// Config: `dataset` (required); `normalize` defaults to false
    /// (raw dot products; the min <= meanP <= max containment is
    /// asserted in that mode).
    Analyze(CommonArgs),
    /// Train squeeze excitation-and-aggregation at each reduction
    /// ratio in `sweep_ratios` (default [2,3,4,6]), emitting one
    /// report CSV per ratio under `out`.
    SweepRatio(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, result) = match &cli.command {
        Command::GenData(a) => (a, run::gen_data(a)),
        Command::Train(a) => (a, run::train(a)),
        Command::Eval(a) => (a, run::eval(a)),
        Command::GradCheck(a) => (a, run::grad_check(a)),
        Command::DumpWeights(a) => (a, run::dump_weights(a)),
        Command::Analyze(a) => (a, run::analyze(a)),
        Command::SweepRatio(a) => (a, run::sweep_ratio(a)),
    };
    let _ = args;
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Single-line, machine-parsable failure report with the
            // full cause chain.
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

/// Resolves a config-relative path: absolute stays, relative resolves
/// against the config file's directory.
pub(crate) fn resolve_path(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
