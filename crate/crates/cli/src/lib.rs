//! The `listereo` command line: dataset generation, training, evaluation,
//! sparsity sweeps, depth colourization and gradient checks.
//!
//! Every command reads an optional plain-text run configuration
//! (`section.key = value` lines, see `listereo reference`) and validates it
//! before touching the filesystem.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
//! 3 I/O error.
//!
//! The help text of every command lists exactly the flags the parser accepts:
//!
//! ```
//! for (path, flags) in listereo_cli::flag_registry() {
//!     let help = listereo_cli::help_text(&path);
//!     assert_eq!(listereo_cli::flags_in(&help), flags, "{path:?}");
//! }
//! ```

mod commands;

pub use commands::{format_metrics, CONFIG_FILE};

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use listereo_core::losses::TrainMode;
use listereo_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LISTEREO_THREADS";

#[derive(Debug, Parser)]
#[command(name = "listereo", version, about = "Stereo + LIDAR depth estimation on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stereo + LIDAR dataset
    Gen(GenArgs),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint against ground truth
    Eval(EvalArgs),
    /// Run a sparsity sweep or the photometric-weight ablation
    Sweep(SweepArgs),
    /// Render a 16-bit depth PNG as a colour PPM
    Colorize(ColorizeArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Print every configuration key with its default value
    Reference,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Run configuration file; defaults apply when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints and the training log
    #[arg(long)]
    pub out: PathBuf,
    /// Training mode, overriding train.mode
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    /// Resume from this checkpoint, continuing its step counter
    #[arg(long)]
    pub from_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run configuration file; supplies eval.los and eval.seed
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to evaluate
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use ground truth as the prediction instead of a checkpoint
    #[arg(long)]
    pub oracle: bool,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of LIDAR returns kept, overriding eval.los
    #[arg(long)]
    pub los: Option<f64>,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the result to this file instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKindArg {
    /// One model per sparsity level, trained and evaluated at that level
    Train,
    /// One checkpoint evaluated at every sparsity level
    Infer,
    /// One self-supervised model per photometric weight
    Beta,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep kind
    #[arg(value_enum)]
    pub kind: SweepKindArg,
    /// Run configuration file; supplies sweep.levels and sweep.betas
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset (train and beta sweeps)
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Held-out dataset
    #[arg(long)]
    pub eval_data: PathBuf,
    /// Checkpoint to evaluate (infer sweep)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training mode, overriding train.mode
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    /// Output directory for the report files
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    /// 16-bit depth PNG
    #[arg(long)]
    pub input: PathBuf,
    /// Output PPM
    #[arg(long)]
    pub out: PathBuf,
    /// Depth mapped to the far end of the colour scale; defaults to the largest valid depth
    #[arg(long)]
    pub max_depth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the random instances
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative-error tolerance for primitives
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Relative-error tolerance for the end-to-end loss
    #[arg(long, default_value_t = 1e-3)]
    pub e2e_tol: f64,
    /// Network parameters sampled by the end-to-end check
    #[arg(long, default_value_t = 20)]
    pub params: usize,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse()
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    /// A check ran to completion and found failures.
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        use listereo_tensor::TensorError;
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Numeric(_) => EXIT_NUMERIC,
            Failure::Core(e) => match e {
                Error::Io { .. } | Error::Format { .. } | Error::Decode(_) => EXIT_IO,
                Error::NonFinite { .. } | Error::Tensor(TensorError::DegenerateStatistics(_)) => EXIT_NUMERIC,
                Error::Config { .. } | Error::Contract(_) | Error::EmptyGroundTruth | Error::Tensor(_) => EXIT_USAGE,
            },
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

/// Long flags accepted by each command path, `[]` being the top level.
pub fn flag_registry() -> Vec<(Vec<String>, BTreeSet<String>)> {
    fn walk(cmd: &clap::Command, path: Vec<String>, out: &mut Vec<(Vec<String>, BTreeSet<String>)>) {
        let mut cmd = cmd.clone();
        cmd.build();
        let flags = cmd.get_arguments().filter_map(|a| a.get_long()).map(|l| format!("--{l}")).collect();
        out.push((path.clone(), flags));
        for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
            let mut p = path.clone();
            p.push(sub.get_name().to_string());
            walk(sub, p, out);
        }
    }
    let mut out = Vec::new();
    walk(&Cli::command(), Vec::new(), &mut out);
    out
}

/// Rendered `--help` text for a command path.
pub fn help_text(path: &[String]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut cur = &mut cmd;
    for name in path {
        cur = cur.find_subcommand_mut(name).expect("path from flag_registry");
    }
    cur.render_long_help().to_string()
}

/// Distinct `--flag` tokens in help output.
pub fn flags_in(help: &str) -> BTreeSet<String> {
    help.lines()
        .flat_map(|l| l.split([' ', ',', '=', '<', '[']))
        .filter(|w| w.starts_with("--") && w.len() > 2 && w[2..].chars().all(|c| c.is_ascii_alphanumeric() || c == '-'))
        .map(str::to_string)
        .collect()
}
