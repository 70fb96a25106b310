use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedmap_cli::report::cmd_report;
use fedmap_cli::run::cmd_run;
use fedmap_cli::synth::cmd_synth;
use fedmap_cli::verify::cmd_verify;
use fedmap_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedmap", version, about = "Location leakage lab for federated signal maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replace the config's master seed (and the synthetic generator seed).
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical verification suite.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a results CSV.
    Report {
        /// Results CSV written by `run`.
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        if let Some(synth) = cfg.data.synth.as_mut() {
            synth.seed = s;
        }
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load(&config, cli.seed_override)?;
            let stats = cmd_synth(&cfg, &out)?;
            let total: usize = stats.iter().map(|s| s.total()).sum();
            println!("wrote {total} measurements to {}", out.display());
            for s in &stats {
                println!(
                    "user {:>3}: {:>6} rows in {:>3} batches (mean {:.1}, min {}, max {})",
                    s.user_id,
                    s.total(),
                    s.sizes.len(),
                    s.mean,
                    s.min,
                    s.max
                );
            }
        }
        Command::Run { config, out } => {
            let cfg = load(&config, cli.seed_override)?;
            let out = out
                .or_else(|| cfg.out.clone())
                .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out`".into()))?;
            let res = cmd_run(&cfg, &out)?;
            println!("results: {}", res.results.display());
            println!("trace:   {}", res.trace.display());
        }
        Command::Verify { config } => {
            let cfg = load(&config, cli.seed_override)?;
            let report = cmd_verify(&cfg)?;
            print!("{report}");
            if !report.passed() {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed())
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(CliError::Verify(failed.join(", ")).into());
            }
        }
        Command::Report { results, out } => {
            let out = out.unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
            let rep = cmd_report(&results, &out).with_context(|| format!("reporting {}", results.display()))?;
            print!("{}", rep.table);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<CliError>())
        .map_or(4, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDMAP_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: cannot set up {j} workers: {e}");
            return ExitCode::from(4);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
