mod commands;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use itreduce_core::covprop::{FilterOptions, InnovationNoise};
use itreduce_core::klmetrics::{IndexConvention, KlOptions, KlPath};
use itreduce_core::ErrorClass;

/// Compare and reduce linear Gaussian state-space models over finite horizons.
#[derive(Debug, Parser)]
#[command(name = "itreduce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// n-step KL rate between a model and one frozen variant
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Frozen states, 1-based, e.g. "3,4"; empty freezes nothing
        #[arg(long, default_value = "")]
        subset: String,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
    },
    /// Gramian-based Hankel singular values
    Hankel {
        #[command(flatten)]
        common: Common,
        /// Use the continuous-time Lyapunov equations
        #[arg(long)]
        continuous: bool,
    },
    /// Information transfer from every k-subset to the output, with ranking
    Reduce {
        #[command(flatten)]
        common: Common,
        /// Number of states to remove
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// Extra horizons at which to report the best subset, e.g. "5,20,100"
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
    },
    /// Crossing of the two single-state freezes of a decoupled two-state model
    Crossing {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 400)]
        horizon: usize,
    },
    /// Rankings at a finite horizon next to the asymptotic ranking
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InnovationArg {
    OutputFeedthrough,
    InputGram,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConventionArg {
    StateAtStep,
    Propagated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PathArg {
    Filter,
    ExactObservation,
}

#[derive(Debug, Args)]
struct Common {
    /// Model file (JSON)
    #[arg(long)]
    model: PathBuf,
    /// CSV report destination; stdout when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "output-feedthrough")]
    innovation: InnovationArg,
    #[arg(long, value_enum, default_value = "state-at-step")]
    index_convention: ConventionArg,
    #[arg(long, value_enum, default_value = "filter")]
    path: PathArg,
    /// Include the B D^T cross-covariance in the filters
    #[arg(long)]
    correlated_noise: bool,
    /// Riccati fixed-point tolerance
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Riccati iteration cap
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    /// Worker threads for subset evaluation
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn kl_options(&self) -> KlOptions {
        KlOptions {
            filter: FilterOptions {
                innovation: match self.innovation {
                    InnovationArg::OutputFeedthrough => InnovationNoise::OutputFeedthrough,
                    InnovationArg::InputGram => InnovationNoise::InputGram,
                },
                correlated_noise: self.correlated_noise,
                riccati_tol: self.tol,
                max_iter: self.max_iter,
            },
            path: match self.path {
                PathArg::Filter => KlPath::Filter,
                PathArg::ExactObservation => KlPath::ExactObservation,
            },
            convention: self.convention(),
        }
    }

    fn convention(&self) -> IndexConvention {
        match self.index_convention {
            ConventionArg::StateAtStep => IndexConvention::StateAtStep,
            ConventionArg::Propagated => IndexConvention::Propagated,
        }
    }

    /// Settings that affect the numbers, echoed into the report header.
    fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("innovation", value_name(self.innovation)),
            ("index-convention", value_name(self.index_convention)),
            ("path", value_name(self.path)),
            ("correlated-noise", self.correlated_noise.to_string()),
            ("tol", format!("{:e}", self.tol)),
            ("max-iter", self.max_iter.to_string()),
        ]
    }
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_string())
        .unwrap_or_default()
}

#[derive(Debug)]
pub enum CliError {
    Core(itreduce_core::Error),
    Io(String),
    Usage(String),
}

impl From<itreduce_core::Error> for CliError {
    fn from(e: itreduce_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn class(&self) -> (&'static str, u8) {
        match self {
            CliError::Io(_) => ("io", 1),
            CliError::Usage(_) => ("usage", 2),
            CliError::Core(e) => match e.class() {
                ErrorClass::Parse => ("parse", 3),
                ErrorClass::Validation => ("validation", 4),
                ErrorClass::Numerical => ("numerical", 5),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Io(m) | CliError::Usage(m) => m.clone(),
        }
    }
}

/// Relative paths go under `ITREDUCE_OUTPUT_DIR` when it is set.
fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os("ITREDUCE_OUTPUT_DIR") {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    let path = resolve_output(path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Analyze { common, .. }
        | Command::Hankel { common, .. }
        | Command::Reduce { common, .. }
        | Command::Crossing { common, .. }
        | Command::Compare { common, .. } => common,
    };
    let model = commands::load(&common.model)?;
    let opts = common.kl_options();
    let mut report = match &cli.command {
        Command::Analyze { subset, horizon, .. } => {
            commands::analyze(&model, &commands::parse_subset(subset)?, *horizon, &opts)?
        }
        Command::Hankel { continuous, .. } => commands::hankel(&model, *continuous)?,
        Command::Reduce {
            order,
            horizon,
            horizons,
            ..
        } => commands::with_jobs(common.jobs, || {
            commands::reduce(&model, *order, *horizon, horizons, &opts)
        })?,
        Command::Crossing { horizon, .. } => {
            commands::crossing(&model, *horizon, common.convention())?
        }
        Command::Compare { order, horizon, .. } => commands::with_jobs(common.jobs, || {
            commands::compare(&model, *order, *horizon, &opts)
        })?,
    };
    let echo_at = 3.min(report.metadata.len());
    for (i, (k, v)) in common.echo().into_iter().enumerate() {
        report.metadata.insert(echo_at + i, (k.to_string(), v));
    }

    let csv = report.to_csv();
    match &common.output {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &common.json {
        write_file(path, &report.to_json())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = e.class();
            let msg = e.message().replace(['\n', '\r'], " ");
            eprintln!("itreduce: error class={class} code={code} message={msg:?}");
            ExitCode::from(code)
        }
    }
}
