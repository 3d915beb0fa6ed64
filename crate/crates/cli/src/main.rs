//! `kgrec` command-line driver.

mod commands;
mod error;
mod manifest;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "kgrec", version, about = "Knowledge-graph rationalized recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and write checkpoints, the metrics log and a manifest.
    Train(TrainArgs),
    /// Rank with a checkpoint; optional group, partial-KG and rationale reports.
    Evaluate(EvaluateArgs),
    /// Train ablation variants over several seeds and tabulate test metrics.
    Ablate(MultiArgs),
    /// Train once per value of one hyperparameter.
    Sweep(MultiArgs),
    /// Per-relation mean rationale scores of a checkpoint (or of fresh parameters).
    Explain(ExplainArgs),
    /// Finite-difference check of every loss term.
    Gradcheck(CheckArgs),
    /// Run the built-in oracle suites.
    Selfcheck(CheckArgs),
    /// Print the default or the resolved configuration.
    Config(ConfigArgs),
    /// Load, optionally k-core filter, split and write a dataset directory.
    Prepare(PrepareArgs),
}

/// Flags shared by every command; each command reads the ones it needs.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Dataset directory, or `toy` / `toy-tiny` for generated data.
    #[arg(long)]
    pub dataset: Option<String>,
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "KGREC_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `--overwrite=false` refuses to write into a non-empty output directory.
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub overwrite: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "k-m")]
    pub k_m: Option<usize>,
    #[arg(long = "rho-k")]
    pub rho_k: Option<f64>,
    #[arg(long = "rho-u")]
    pub rho_u: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sweep one parameter over its grid (or over `--values`).
    #[arg(long)]
    pub sweep: Option<String>,
    /// Comma-separated ablation variants: full, no_mae, random_mask, no_cl, random_aug, all.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Comma-separated KG keep ratios in (0, 1].
    #[arg(long = "partial-kg")]
    pub partial_kg: Option<String>,
    /// Emit the per-relation rationale report.
    #[arg(long)]
    pub explain: bool,
    /// User grouping for a stratified report: user-degree or item-sparsity.
    #[arg(long)]
    pub groups: Option<String>,
    /// Any other config key, e.g. `--set lr=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Rerun exactly what a previous manifest describes.
    #[arg(long = "from-manifest")]
    pub from_manifest: Option<PathBuf>,
    /// Continue from a checkpoint (parameters, Adam moments, step).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Seeds for `--ablate`, comma-separated.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Values for `--sweep`, comma-separated.
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Args, Debug)]
pub struct MultiArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seeds, comma-separated (default: five consecutive seeds from `--seed`).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Values for `--sweep`, comma-separated.
    #[arg(long)]
    pub values: Option<String>,
    /// Parameter to sweep (same as `--sweep`).
    pub param: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Manifest of the training run (default: beside the checkpoint).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split to rank: test, valid or train (train ranks without exclusion).
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Retrain per keep ratio instead of re-encoding with the checkpoint.
    #[arg(long)]
    pub retrain: bool,
    /// Number of user groups.
    #[arg(long = "num-groups", default_value_t = 5)]
    pub num_groups: usize,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to explain; fresh parameters from `--seed` when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Suites to run, comma-separated or repeated.
    #[arg(long = "suite", value_delimiter = ',')]
    pub suites: Vec<String>,
    /// Deliberately break something to show the checks fail.
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub common: Common,
    /// Print every default value.
    #[arg(long = "dump-defaults")]
    pub dump_defaults: bool,
    /// Defaults of a named preset: `default`, `toy` or `toy-tiny`.
    #[arg(long, default_value = "default")]
    pub preset: String,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep only the k-core of all interactions and re-split.
    #[arg(long)]
    pub core: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let res = match cli.command {
        Command::Train(a) => commands::train(a, &argv),
        Command::Evaluate(a) => commands::evaluate(a, &argv),
        Command::Ablate(a) => commands::ablate(a, &argv),
        Command::Sweep(a) => commands::sweep(a, &argv),
        Command::Explain(a) => commands::explain(a, &argv),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
        Command::Config(a) => commands::config(a),
        Command::Prepare(a) => commands::prepare(a, &argv),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
