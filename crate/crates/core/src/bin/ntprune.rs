use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ntprune::orchestrator::{
    collect_reports, plot_report, Experiment, ExperimentConfig, Method, ModelSelection, SlcOptions, OUT_ROOT_ENV,
};
use ntprune::transferability::Scheme;

#[derive(Parser)]
#[command(name = "ntprune", version, about = "Non-transferable pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; run directories are created below it.
    #[arg(long, env = OUT_ROOT_ENV)]
    out: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ntp,
    Magnitude,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Ff,
    Lp,
}

#[derive(Subcommand)]
enum Command {
    /// Train the architecture on the source domain.
    Pretrain(Common),
    /// Prune the pretrained checkpoint.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Magnitude-pruning sparsity; defaults to the config's.
        #[arg(long)]
        sparsity: Option<f64>,
    },
    /// Transfer vs. scratch learning curves on the target domain.
    Slc {
        #[command(flatten)]
        common: Common,
        /// Evaluate a pruned checkpoint of this run instead of the pretrained one.
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        method: Option<MethodArg>,
        #[arg(long, requires = "method")]
        sparsity: Option<f64>,
        /// Evaluate an arbitrary checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        lr: Option<f64>,
        /// Let full fine-tuning update pruned weights.
        #[arg(long)]
        revive_zeros: bool,
        /// Worker threads for independent (size, seed) runs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Merge learning-curve reports into one table.
    Report {
        /// Run directories, SLC directories or report files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for the merged `report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the SVG figure of a report.
    Plot {
        report: PathBuf,
        /// Output file; next to the report by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default experiment config.
    DefaultConfig,
}

fn experiment(common: &Common) -> anyhow::Result<Experiment> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let exp = Experiment::new(cfg, common.out.as_deref())?;
    emit(&format!("run directory: {}\n", exp.dir.display()))?;
    Ok(exp)
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Ntp => Method::Ntp,
        MethodArg::Magnitude => Method::Magnitude,
    }
}

/// Writes command output to stdout; a reader that closed the pipe early
/// (`| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pretrain(common) => {
            let m = experiment(&common)?.pretrain()?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&m)?))?;
        }
        Command::Prune { common, method: m, sparsity } => {
            let m = experiment(&common)?.prune(method(m), sparsity)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&m)?))?;
        }
        Command::Slc { common, method: m, sparsity, checkpoint, scheme, lr, revive_zeros, jobs } => {
            let exp = experiment(&common)?;
            let sel = match (m, checkpoint) {
                (_, Some(dir)) => {
                    let label = dir.file_name().map_or("checkpoint".into(), |n| n.to_string_lossy().into_owned());
                    ModelSelection::Path { dir, label }
                }
                (Some(MethodArg::Ntp), None) => ModelSelection::Ntp,
                (Some(MethodArg::Magnitude), None) => {
                    ModelSelection::Magnitude(sparsity.unwrap_or(exp.config.magnitude.sparsity))
                }
                (None, None) => ModelSelection::Pretrained,
            };
            let opts = SlcOptions {
                scheme: scheme.map(|s| match s {
                    SchemeArg::Ff => Scheme::FF,
                    SchemeArg::Lp => Scheme::LP,
                }),
                lr,
                revive_zeros,
                jobs,
            };
            let a = exp.slc(&sel, &opts)?;
            emit(&format!(
                "{}: SLC-AUC {:.4} (cache hits {})\nreport: {}\n",
                a.report.label,
                a.report.auc,
                a.cache_hits,
                a.dir.join("report.json").display()
            ))?;
        }
        Command::Report { runs, out } => {
            let cmp = collect_reports(&runs)?;
            emit(&cmp.table())?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                cmp.write_csv(&dir.join("report.csv"))?;
            }
        }
        Command::Plot { report, out } => {
            let path = plot_report(&report, out.as_deref())?;
            emit(&format!("{}\n", path.display()))?;
        }
        Command::DefaultConfig => {
            emit(&format!("{}\n", ExperimentConfig::default().to_json()?))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
