use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swfqe::checks::{run_suite, write_checks};
use swfqe::experiment::{
    aggregate, preset, read_results, run_config, write_aggregate, write_outputs, ExperimentConfig,
    PRESET_NAMES,
};

#[derive(Parser)]
#[command(
    name = "swfqe",
    version,
    about = "Stationary-weighted fitted Q-evaluation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `output`, else `results`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print a named preset config; with --run, also execute it.
    Preset {
        name: String,
        #[arg(long)]
        run: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the invariant suite; exits 1 if any check fails.
    Check {
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Also write the outcomes as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate result CSVs into per-cell summaries (stdout unless --out).
    Aggregate {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn set_threads(threads: Option<usize>) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(n) = threads {
        if n == 0 {
            return Err("--threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn execute(cfg: &ExperimentConfig, out: Option<PathBuf>) -> CliResult {
    let out = out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let output = run_config(cfg)?;
    for path in write_outputs(cfg, &output, &out)? {
        println!("{}", path.display());
    }
    if !output.failures.is_empty() {
        eprintln!("warning: {} work item(s) failed:", output.failures.len());
        for f in output.failures.iter().take(5) {
            eprintln!("  {} seed {}: {}", f.cell, f.seed, f.error);
        }
    }
    if output.checks.iter().any(|c| !c.passed) {
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => {
            set_threads(threads)?;
            let text = std::fs::read_to_string(&config)
                .map_err(|e| format!("cannot read {}: {e}", config.display()))?;
            execute(&ExperimentConfig::from_toml(&text)?, out)
        }
        Command::Preset {
            name,
            run,
            out,
            threads,
        } => {
            let text = preset(&name).ok_or_else(|| {
                format!(
                    "unknown preset `{name}` (available: {})",
                    PRESET_NAMES.join(", ")
                )
            })?;
            if !run {
                print!("{text}");
                return Ok(ExitCode::SUCCESS);
            }
            set_threads(threads)?;
            execute(&ExperimentConfig::from_toml(text)?, out)
        }
        Command::Check { base_seed, out } => {
            let checks = run_suite(base_seed);
            for c in &checks {
                println!(
                    "{} {:<30} worst={:.3e} tol={:.0e} n={} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.tolerance,
                    c.instances,
                    c.detail
                );
            }
            if let Some(path) = out {
                let metadata = [("base_seed", base_seed.to_string())];
                write_checks(BufWriter::new(File::create(path)?), &checks, &metadata)?;
            }
            Ok(if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Aggregate { csv, out } => {
            let mut rows = Vec::new();
            for path in &csv {
                let file =
                    File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
                rows.extend(
                    read_results(BufReader::new(file))
                        .map_err(|e| format!("{}: {e}", path.display()))?,
                );
            }
            let summary = aggregate(&rows)?;
            let metadata = [("sources", csv.len().to_string())];
            match out {
                Some(path) => {
                    write_aggregate(BufWriter::new(File::create(path)?), &summary, &metadata)?
                }
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    write_aggregate(&mut lock, &summary, &metadata)?;
                    lock.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
