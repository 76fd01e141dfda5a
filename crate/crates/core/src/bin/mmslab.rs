use clap::{Parser, Subcommand};
use mmslab::cli::{run_experiment, ExperimentConfig, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mmslab", version, about = "Heat kernel, Green function and flow regularity checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Directory for cached bases and flows.
        #[arg(long, env = "MMS_CACHE")]
        cache: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        seed,
        threads,
        cache,
    } = Cli::parse().command;

    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let opts = RunOptions {
        out,
        seed,
        cache,
        threads,
    };
    match run_experiment(&cfg, &text, &opts) {
        Ok(summary) => {
            for e in &summary.errors {
                eprintln!("step failed: {e}");
            }
            let failed: Vec<&str> = summary
                .rows
                .iter()
                .filter(|r| r.gated && r.status == mmslab::cli::Status::Fail)
                .map(|r| r.name.as_str())
                .collect();
            println!(
                "{} rows written to {}",
                summary.rows.len(),
                summary.out_dir.join("report.csv").display()
            );
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                println!("gate failures: {}", failed.join(", "));
                ExitCode::from(1)
            }
        }
        Err(mmslab::Error::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
