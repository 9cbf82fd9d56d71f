use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srk_cli::commands::{cmd_bench, cmd_compare, cmd_oracle, cmd_sample, cmd_solve};
use srk_cli::config::ExperimentConfig;
use srk_cli::exit_code;
use srk_cli::results::fmt_value;
use srk_core::{Error, Result};

#[derive(Parser)]
#[command(name = "srk", version, about = "Data-driven stochastic reachability")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output file (overrides the config's [output] block).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker thread cap (overrides `threads` in the config).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a transition sample and write it as a dataset file.
    Sample { config: PathBuf },
    /// Fit the configured embedding and write the safety probabilities.
    Solve { config: PathBuf },
    /// Run the grid dynamic-programming oracle.
    Oracle { config: PathBuf },
    /// Time fit plus recursion over an M or D sweep.
    Bench { config: PathBuf },
    /// Compare the k0 columns of two results files.
    Compare { a: PathBuf, b: PathBuf },
}

fn set_threads(flag: Option<usize>, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let threads = match flag {
        Some(0) => return Err(Error::Validation("--threads must be at least 1".into())),
        Some(t) => Some(t),
        None => cfg.and_then(ExperimentConfig::threads),
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Computation(e.to_string()))?;
    }
    Ok(())
}

fn load(path: &Path, threads: Option<usize>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    set_threads(threads, Some(&cfg))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Sample { config } => {
            let s = cmd_sample(&load(config, cli.threads)?, out)?;
            println!(
                "wrote {}: M={} n={} m={} seed={}",
                s.path.display(),
                s.size,
                s.state_dim,
                s.input_dim,
                s.seed
            );
        }
        Command::Solve { config } => {
            let s = cmd_solve(&load(config, cli.threads)?, out)?;
            println!(
                "wrote {} ({} points, fit {:.3}s, recursion {:.3}s) and {}",
                s.path.display(),
                s.points,
                s.timings.fit,
                s.timings.recursion,
                s.meta.display()
            );
        }
        Command::Oracle { config } => {
            let s = cmd_oracle(&load(config, cli.threads)?, out)?;
            println!(
                "wrote {} ({} points, {:.3}s) and {}",
                s.path.display(),
                s.points,
                s.timings.recursion,
                s.meta.display()
            );
        }
        Command::Bench { config } => {
            let s = cmd_bench(&load(config, cli.threads)?, out)?;
            for (p, t) in &s.rows {
                println!("{p}: {t:.4}s");
            }
            println!("wrote {}", s.path.display());
        }
        Command::Compare { a, b } => {
            set_threads(cli.threads, None)?;
            let s = cmd_compare(a, b, out)?;
            println!("mean_abs_diff {}", fmt_value(s.comparison.mean_abs));
            println!("max_abs_diff {}", fmt_value(s.comparison.max_abs));
            println!("wrote {}", s.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("srk: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
