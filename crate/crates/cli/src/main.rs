use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cafin::experiment::{
    cmd_preprocess, cmd_report, cmd_run, ExperimentConfig, ENV_OUTPUT_DIR, ENV_WORKERS,
};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(version, about = "Centrality-aware fair GraphSAGE embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the distance oracle, degree vector and group split for the full graph.
    Preprocess {
        /// Experiment config (TOML).
        config: PathBuf,
    },
    /// Train, evaluate and compare every variant for every seed.
    Run { config: PathBuf },
    /// Re-render a finished run directory.
    Report { dir: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, cafin::Error> {
    let cfg = ExperimentConfig::load(path)?;
    log::info!(
        "output {} with {} worker(s) (override with {ENV_OUTPUT_DIR} / {ENV_WORKERS})",
        cfg.experiment.output_dir.display(),
        cfg.experiment.workers
    );
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { config } => load(&config).and_then(|cfg| {
            let s = cmd_preprocess(&cfg)?;
            println!(
                "{} nodes, {} edges, diameter {}, oracle {} bytes built in {:.3}s",
                s.nodes, s.edges, s.diameter, s.oracle_bytes, s.build_seconds
            );
            Ok(true)
        }),
        Command::Run { config } => load(&config).and_then(|cfg| {
            let summary = cmd_run(&cfg)?;
            print!("{}", cmd_report(&cfg.experiment.output_dir)?);
            Ok(summary.all_ok())
        }),
        Command::Report { dir } => cmd_report(&dir).map(|table| {
            print!("{table}");
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one seed failed; see reports.csv");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, cafin::Error::Capacity(_)) {
                eprintln!("hint: set [oracle] mode = \"landmark\" to bound memory");
            }
            ExitCode::FAILURE
        }
    }
}
