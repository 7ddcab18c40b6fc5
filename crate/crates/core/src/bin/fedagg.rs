use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedagg::cli::{
    emit_trajectories, parse_config, run, run_checks, sweep, RunDescriptor, SweepKey,
};
use fedagg::Result;

#[derive(Parser)]
#[command(
    name = "fedagg",
    version,
    about = "Federated learning simulator with learned aggregation weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy and seed of a descriptor.
    Run {
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run for each value of one key and tabulate the results.
    Sweep {
        config: PathBuf,
        /// interval (or t0), rounds, weight_steps, local_iters, beta_lr, mu, skew.
        #[arg(long)]
        key: Option<String>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild trajectories.csv files (and the sweep table) from rounds.csv.
    Emit {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a descriptor without running it.
    Validate { config: PathBuf },
    /// Run the built-in numerical self-checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<RunDescriptor> {
    let mut d = parse_config(config)?;
    if let Some(o) = out {
        d.output_dir = o;
    }
    Ok(d)
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config, out } => {
            let d = load(&config, out)?;
            let report = run(&d)?;
            for s in &report.summaries {
                println!(
                    "{:<28} global {:.4} ± {:.4}  local {:.4} ± {:.4}  gen {:.4} ± {:.4}  (n={})",
                    s.label,
                    s.global_test_avg.0,
                    s.global_test_avg.1,
                    s.local_avg.0,
                    s.local_avg.1,
                    s.local_gen.0,
                    s.local_gen.1,
                    s.runs
                );
            }
            println!("wrote {}", d.output_dir.join("summary.csv").display());
        }
        Command::Sweep {
            config,
            key,
            values,
            out,
        } => {
            let d = load(&config, out)?;
            let (key, values) = match (key, d.sweep.clone()) {
                (Some(k), _) => (SweepKey::parse(&k)?, values),
                (None, Some(sw)) if values.is_empty() => (sw.key, sw.values),
                (None, Some(sw)) => (sw.key, values),
                (None, None) => {
                    return Err(fedagg::Error::config(
                        "no sweep key: pass --key or add a [sweep] section",
                    ))
                }
            };
            let path = sweep(&d, key, &values)?;
            println!("wrote {}", path.display());
        }
        Command::Emit { config, out } => {
            let d = load(&config, out)?;
            for p in emit_trajectories(&d)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Validate { config } => {
            let d = parse_config(&config)?;
            println!(
                "ok: {} strategies x {} seeds, T = {}, t0 = {}",
                d.strategies.len(),
                d.seeds.len(),
                d.federated.rounds,
                d.federated.interval
            );
        }
        Command::Check { seed } => {
            let results = run_checks(seed)?;
            let mut all = true;
            for r in &results {
                println!(
                    "{} {} ({})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                all &= r.passed;
            }
            return Ok(all);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("fedagg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
