mod analyze;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "gcniii",
    version,
    about = "Deep graph convolution with a wide linear branch, for node classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources shared by every training command.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Named preset, e.g. cora-gcniii-semi.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML run configuration (a `config.resolved` file works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundle directory or a name under $GCNIII_DATA.
    #[arg(long)]
    pub dataset: Option<String>,
    /// A seed count N (train.seed … train.seed+N−1) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override any field, e.g. --set model.layers=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblationKind {
    Techniques,
    Wide,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum NormArg {
    #[default]
    Frobenius,
    Spectral,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed, sequentially.
    Train(RunArgs),
    /// Like train, with seeds spread over a worker pool.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Worker threads (default: CPU cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-evaluate the checkpoints of a finished run on its test split.
    Eval {
        /// Run directory written by train or sweep.
        #[arg(long)]
        run: PathBuf,
        /// Dataset override.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Technique removals or wide-component addition against a base preset.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to techniques for GCNIII bases and wide otherwise.
        #[arg(long, value_enum)]
        kind: Option<AblationKind>,
    },
    /// Diagnostic studies.
    #[command(subcommand)]
    Analyze(Analysis),
    /// Print dataset statistics.
    Inspect {
        #[arg(long)]
        dataset: String,
    },
    /// Write a synthetic contextual-SBM bundle.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csbm")]
        name: String,
        #[arg(long, default_value_t = 600)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        features: usize,
        #[arg(long, default_value_t = 4.0)]
        avg_degree: f64,
        #[arg(long, default_value_t = 0.8)]
        homophily: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
pub enum Analysis {
    /// Share of entries above a threshold in Ĝ and in the PPR matrix.
    Density {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-12)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Differences between closed-form outputs of consecutive depths.
    Theorem1 {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 80)]
        kmax: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        /// First weight seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive weight seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, value_enum, default_value_t = NormArg::Frobenius)]
        norm: NormArg,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Training versus validation error over the final epochs of a run.
    Overgen {
        #[arg(long)]
        run: PathBuf,
    },
    /// Degrees of misclassified test nodes, one column per run.
    Degrees {
        /// NAME=DIR, repeatable.
        #[arg(long = "run", value_name = "NAME=DIR", required = true)]
        runs: Vec<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Spectral bounds of Ĝ and the augmented Laplacian.
    Spectral {
        #[arg(long)]
        dataset: String,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(args) => run::train_command(&args, 1),
        Command::Sweep { run, workers } => {
            let workers = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            run::train_command(&run, workers.max(1))
        }
        Command::Eval { run, dataset } => run::eval_command(&run, dataset.as_deref()),
        Command::Ablate { run, kind } => run::ablate_command(&run, kind),
        Command::Analyze(a) => analyze::analyze_command(a),
        Command::Inspect { dataset } => analyze::inspect_command(&dataset),
        Command::Generate {
            out,
            name,
            nodes,
            classes,
            features,
            avg_degree,
            homophily,
            seed,
        } => {
            let params = gcniii::data::CsbmParams {
                nodes,
                classes,
                features,
                avg_degree,
                homophily,
                ..Default::default()
            };
            run::generate_command(&out, &name, &params, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            let unknown_preset = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(gcniii::Error::UnknownPreset { .. })));
            if unknown_preset {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
