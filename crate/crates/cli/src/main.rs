use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use herdsim_cli::report::{report, ReportKind};
use herdsim_cli::{config, run};

#[derive(Parser)]
#[command(name = "herdsim", version, about = "Simulate and measure herd behavior in multi-agent answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Benchmark file; repeat to run several. Replaces the config's list.
        #[arg(long = "benchmark")]
        benchmarks: Vec<PathBuf>,
    },
    /// Build a table or heatmap from a records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum)]
        kind: ReportKind,
        #[arg(long)]
        out: PathBuf,
        /// Bins per axis for the confidence heatmap.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Check a config file and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "benchmark")]
        benchmarks: Vec<PathBuf>,
    },
}

fn validate(path: &Path, benchmarks: &[PathBuf]) -> Result<()> {
    let loaded = config::load(path)?;
    let paths = if benchmarks.is_empty() { loaded.benchmark_paths() } else { benchmarks.to_vec() };
    let mut missing = Vec::new();
    for p in &paths {
        if let Err(e) = herdsim_core::dataset::load_benchmark(p) {
            missing.push(format!("benchmarks: {e}"));
        }
    }
    anyhow::ensure!(missing.is_empty(), "{}", missing.join("\n"));
    println!("{}: ok ({} experiment, {} benchmark(s))", path.display(), loaded.config.experiment, paths.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, benchmarks } => run::run(&config, &benchmarks).map(|r| {
            println!(
                "wrote {} record(s) to {} ({} error(s))",
                r.records,
                r.output_dir.display(),
                r.errors
            );
        }),
        Command::Report { records, kind, out, bins } => report(&records, kind, &out, bins).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::Validate { config, benchmarks } => validate(&config, &benchmarks),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
