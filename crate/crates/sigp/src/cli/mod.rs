//! Command-line front end. [`run`] is what the `sigp` binary calls; it is public so the
//! commands can be driven in-process.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};

pub const EXIT_USAGE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "sigp", version, about = "Low-rank SDR Gaussian process regression and classification")]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for long flags.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Split a dataset into train and test files.
    Split(SplitArgs),
    /// Train a SIGP model.
    Train(TrainArgs),
    /// Predictive mean and variance for each row of a data file.
    Predict(PredictArgs),
    /// Score a predictions file against the labels of a data file.
    Eval(EvalArgs),
    /// Train the exact GP baseline.
    Baseline(BaselineArgs),
    /// Print the SDR spectrum and rank diagnostic of a dataset.
    Inspect(InspectArgs),
    /// Time EM iterations for several training-set sizes.
    Bench(BenchArgs),
    /// Evaluate models on a plotting grid.
    Plotdata(PlotArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// `y = sin(x) + noise` on a union of intervals.
    Sinusoid {
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Noise variance.
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Comma-separated `lo:hi` intervals.
        #[arg(long, default_value = "-6:-2,1:5", allow_hyphen_values = true)]
        ranges: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Four Gaussian clusters labelled 1 to 4.
    Fourclass {
        #[arg(long, default_value_t = 25)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Response column: `first`, `last`, a zero-based index or a header name.
    #[arg(long, default_value = "last")]
    pub label: String,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Linear,
    #[value(name = "brownian-bridge")]
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SdrArg {
    Sliced,
    Ykernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Auto,
    Regression,
    Classification,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    pub kernel: KernelArg,
    /// A positive number, `median`, or `cv` for the cross-validation grid (RBF only).
    #[arg(long)]
    pub lengthscale: Option<String>,
    /// Keep features and targets on their original scale.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SdrArgs {
    #[arg(long, value_enum, default_value_t = SdrArg::Sliced)]
    pub sdr: SdrArg,
    /// Number of slices for the sliced estimator.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub slices: Option<u64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Response-kernel regularizer (with `--sdr ykernel`).
    #[arg(long)]
    pub zeta1: Option<f64>,
    #[arg(long, value_enum, default_value_t = TaskArg::Auto)]
    pub task: TaskArg,
    /// Confidence level of the rank diagnostic.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub sdr: SdrArgs,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub rank: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub xi: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Output model file.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Also write the training report here.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Column to drop before predicting. Without it, a file with one column more than the
    /// model expects loses its last column.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    F1,
    Accuracy,
    Mse,
    Nlpd,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Data file holding the true responses.
    #[arg(long, value_name = "PATH")]
    pub truth: PathBuf,
    #[arg(long, default_value = "last")]
    pub label: String,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, value_enum)]
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeanArg {
    Zero,
    Linear,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, value_enum, default_value_t = MeanArg::Linear)]
    pub mean: MeanArg,
    /// Comma-separated noise variances; the best by marginal likelihood is kept.
    #[arg(long)]
    pub noise_grid: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub sdr: SdrArgs,
    /// Number of spectrum values to print.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "500,1000,2000")]
    pub n_list: String,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub rank: u64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Sinusoid,
    Fourclass,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// SIGP model file.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Exact GP model file evaluated on the same grid.
    #[arg(long, value_name = "PATH")]
    pub baseline: Option<PathBuf>,
    /// Points per axis.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    pub grid: u64,
    /// Axis range `lo:hi`; defaults to -6:5 for the sinusoid and -2:2 for the four-class grid.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn flag_present(args: &[OsString], key: &str) -> bool {
    let long = format!("--{key}");
    args.iter().any(|a| a.to_str().is_some_and(|s| s == long || s.starts_with(&format!("{long}="))))
}

/// Append `--key value` for every config entry whose flag is absent from `args`.
fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a.to_str().is_some_and(|s| s == "--config" || s.starts_with("--config="))) else {
        return Ok(args);
    };
    let path = match args[pos].to_str().and_then(|s| s.strip_prefix("--config=")) {
        Some(p) => {
            let p = PathBuf::from(p);
            args.remove(pos);
            p
        }
        None => {
            if pos + 1 >= args.len() {
                return Err(Error::Domain("--config needs a path".into()));
            }
            let p = PathBuf::from(args.remove(pos + 1));
            args.remove(pos);
            p
        }
    };
    let text = std::fs::read_to_string(&path)?;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim().trim_start_matches("--"), v.trim()))
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
        if key.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
        }
        if flag_present(&args, key) {
            continue;
        }
        match value {
            "true" => args.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                args.push(format!("--{key}").into());
                args.push(value.into());
            }
        }
    }
    Ok(args)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn init_threads() {
    if let Some(n) = std::env::var("SIGP_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0) {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
}

/// Parse `args` (including the program name), run the command, and return the exit code.
/// Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    init_logging(cli.verbose);
    init_threads();
    match commands::dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_fills_missing_flags() {
        let dir = std::env::temp_dir().join(format!("sigp-cli-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("train.conf");
        std::fs::write(&path, "# defaults\nrank = 3\nno_header = false\nno-standardize = true\nseed=4\n").unwrap();
        let args = os(&["sigp", "train", "--seed", "1", "--config", path.to_str().unwrap()]);
        let out = expand_config(args).unwrap();
        assert_eq!(out, os(&["sigp", "train", "--seed", "1", "--rank", "3", "--no-standardize"]));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn config_syntax_errors() {
        let dir = std::env::temp_dir().join(format!("sigp-cli-config-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.conf");
        std::fs::write(&path, "rank 3\n").unwrap();
        let arg = format!("--config={}", path.display());
        assert!(matches!(expand_config(os(&["sigp", "train", &arg])), Err(Error::Parse { line: 1, .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rank_zero_is_usage_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(["sigp", "train", "--data", "x.csv", "--model", "m.json", "--rank", "0"], &mut out, &mut err);
        assert_eq!(code, EXIT_USAGE);
        assert!(!err.is_empty());
    }
}
