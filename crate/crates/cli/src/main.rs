use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use conceptlearn::data::ToySpec;
use conceptlearn::experiment::{
    emit_report, manual_curve_csv, run_experiment, run_manual_baseline, save_manual, write_toy, ExperimentConfig,
};
use conceptlearn::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "conceptlearn", version, about = "Interactive concept learning experiments")]
struct Cli {
    /// Worker threads for restarts (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every restart of an experiment config and write the report.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Random-feature curve: n truth features per concept for n = 1..=max-n.
    ManualBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_n: usize,
    },
    /// Rebuild the report files from persisted restart records.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Output directory (defaults to the runs directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic toy dataset and its truth file.
    ToyGen {
        /// Toy spec as JSON; the default layout when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::load(path)
        .and_then(|c| c.validate().map(|()| c))
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::Config)?;
    Ok(cfg)
}

/// Config-shaped errors raised while running still map to the config exit code.
fn classify(e: Error, what: &str) -> Failure {
    let config = matches!(e, Error::Spec(_));
    let e = anyhow::Error::new(e).context(what.to_string());
    if config {
        Failure::Config(e)
    } else {
        Failure::Other(e)
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let records = run_experiment(&cfg).map_err(|e| classify(e, "experiment failed"))?;
            let summary = cfg.output_dir.join("summary.txt");
            print!("{}", fs::read_to_string(&summary).with_context(|| format!("reading {}", summary.display()))?);
            let failed = records.iter().filter(|r| !r.is_complete()).count();
            if failed > 0 {
                eprintln!("{failed} of {} restarts failed; see their record.json", records.len());
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::ManualBaseline { config, max_n } => {
            let cfg = load_config(&config)?;
            let curve = run_manual_baseline(&cfg, max_n).map_err(|e| classify(e, "manual baseline failed"))?;
            save_manual(&curve, &cfg.output_dir).context("saving manual curve")?;
            let csv = manual_curve_csv(&curve).context("formatting manual curve")?;
            let path = cfg.output_dir.join("manual_curve.csv");
            fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            print!("{csv}");
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.clone());
            let report = emit_report(&runs, &out).context("building report")?;
            print!("{}", report.files["summary.txt"]);
            if report.failed_restarts > 0 {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::ToyGen { spec, out } => {
            let spec: ToySpec = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(Failure::Config)?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("invalid toy spec {}", path.display()))
                        .map_err(Failure::Config)?
                }
                None => ToySpec::default(),
            };
            write_toy(&spec, &out).map_err(|e| classify(e, "generating toy data"))?;
            println!("wrote toy dataset to {}", out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon_threads(n) {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn rayon_threads(n: usize) -> anyhow::Result<()> {
    anyhow::ensure!(n >= 1, "--workers must be at least 1");
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}
