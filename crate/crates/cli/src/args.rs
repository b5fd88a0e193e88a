use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "structconv", version, about = "Structured convolutions: verify, analyze, decompose, train")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Check that decomposed layers reproduce direct convolution.
    Verify(VerifyArgs),
    /// Report parameter, multiplication and addition counts.
    Analyze(AnalyzeArgs),
    /// Split trained weights into sum-pool plus small-layer form.
    Decompose(DecomposeArgs),
    /// Train the toy classifier and decompose it.
    TrainToy(TrainArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Regularized,
    Direct,
    Plain,
}

/// `H×W` from `HxW` or a single extent.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| -> Result<usize, String> {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid extent {v:?}"))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub trials: usize,
    /// Spatial size fed to the first layer.
    #[arg(long, value_parser = parse_size, default_value = "32x32")]
    pub input_size: (usize, usize),
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Perturb one coefficient after decomposition.
    #[arg(long, hide = true)]
    pub corrupt_alpha: bool,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Falls back to the config's `input_size` when omitted.
    #[arg(long, value_parser = parse_size)]
    pub input_size: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct DecomposeArgs {
    /// One `.stcv` file for a single-layer config, or a directory holding
    /// `layer_{idx}.stcv` per layer.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_parser = parse_size, default_value = "32x32")]
    pub input_size: (usize, usize),
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value_t = Mode::Regularized)]
    pub mode: Mode,
    #[arg(long)]
    pub seed: u64,
    /// Line-delimited JSON training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Directory for the decomposed model.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}
