use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use catlab::cluster_stats::write_records_csv;
use catlab::experiment::{run_experiment_full, thresholds_for, ExperimentConfig, ExperimentKind};
use catlab::report::{emit_report, summarize, Format};
use catlab::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "catlab", version, about = "Rare-event clustering experiments for heavy-tailed moving averages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the report here instead of stdout (overrides `output_path`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Override `experiment`.
        #[arg(long)]
        experiment: Option<String>,
    },
}

enum Failure {
    Config(String),
    Thresholds,
    Other(String),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let Command::Run {
        config,
        seed,
        workers,
        out,
        format,
        experiment,
    } = cli.command;
    let text = std::fs::read_to_string(&config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(x) = experiment {
        cfg.experiment = ExperimentKind::parse(&x).map_err(|e| Failure::Config(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;

    let output = run_experiment_full(&cfg).map_err(|e| match e {
        Error::Config { .. } => Failure::Config(e.to_string()),
        e => Failure::Other(e.to_string()),
    })?;
    let thresholds = thresholds_for(&cfg);
    let text = emit_report(&output.rows, format, &thresholds).map_err(|e| Failure::Other(e.to_string()))?;

    let target = out.or_else(|| cfg.output_path.as_ref().map(PathBuf::from));
    match target {
        Some(p) => std::fs::write(&p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display())))?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Other(e.to_string()))?,
    }
    if let Some(p) = &cfg.records_path {
        let f = File::create(p).map_err(|e| Failure::Other(format!("{p}: {e}")))?;
        write_records_csv(&output.records, f).map_err(|e| Failure::Other(e.to_string()))?;
    }
    if format == Format::Summary && !summarize(&output.rows, &thresholds).all_pass() {
        return Err(Failure::Thresholds);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Thresholds) => ExitCode::from(3),
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
