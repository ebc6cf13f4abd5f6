//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime failure.

use crate::config::ExperimentConfig;
use crate::demos::save_demos;
use crate::error::{Error, Result};
use crate::experiment::{expert_demos, run_experiment};
use crate::mdp::{expected_reward, occupancy, reverse_kl, PolicyTable};
use crate::metrics::{write_metrics, write_metrics_to};
use crate::ratio::EstimatorKind;
use crate::verify::run_checks;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "nail-lab", version, about = "Imitation learning experiments on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the environment's maximum-entropy expert and save it as JSON.
    GenExpert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample expert demonstrations to a JSONL file.
    Collect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured algorithm and write a metrics CSV.
    Run(RunArgs),
    /// Reverse KL and expected true reward of a saved policy.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Run the invariant suite.
    Verify {
        /// Only run checks whose id starts with this prefix.
        #[arg(long)]
        filter: Option<String>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; overrides the config, stdout when neither is given.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Use exact occupancy ratios.
    #[arg(long, conflicts_with = "sampled")]
    exact: bool,
    /// Use sampled ratios (BCE unless the config names another estimator).
    #[arg(long)]
    sampled: bool,
    /// Record wall-clock time on the final row of each seed.
    #[arg(long)]
    timing: bool,
}

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::Format { .. }
        | Error::ShapeMismatch { .. }
        | Error::GammaOutOfRange(_)
        | Error::IndexOutOfBounds(_)
        | Error::NonStochasticRow { .. }
        | Error::NonStochasticPolicy { .. }
        | Error::BadInitialDistribution
        | Error::BadOccupancy
        | Error::EmptyDataset => 1,
        _ => 2,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Checks(n)) => {
            eprintln!("{n} invariant checks failed");
            2
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

enum Failure {
    Error(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::GenExpert { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = cfg.environment.build(cfg.gamma)?;
            std::fs::write(&out, serde_json::to_string_pretty(&env.expert).map_err(json_err)?).map_err(Error::from)?;
            println!("expert policy written to {}", out.display());
        }
        Command::Collect { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.demos = None;
            let env = cfg.environment.build(cfg.gamma)?;
            let demos = expert_demos(&cfg, &env, seed)?;
            save_demos(&demos, &out)?;
            println!(
                "{} transitions in {} episodes written to {}",
                demos.len(),
                demos.num_episodes(),
                out.display()
            );
        }
        Command::Run(args) => run_command(args)?,
        Command::Eval { config, policy } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = cfg.environment.build(cfg.gamma)?;
            let text = std::fs::read_to_string(&policy)
                .map_err(|e| Error::InvalidConfig(format!("cannot read policy {}: {e}", policy.display())))?;
            let pi: PolicyTable = serde_json::from_str(&text).map_err(|e| Error::Format {
                line: e.line(),
                message: format!("{}: {e}", policy.display()),
            })?;
            env.mdp.check_table("policy", pi.dim())?;
            let occ = occupancy(&env.mdp, &pi)?;
            let report = serde_json::json!({
                "reverse_kl": reverse_kl(&occ, &env.expert_occ, 1e-12)?,
                "expected_true_reward": expected_reward(&occ, &env.true_reward)?,
            });
            println!("{report}");
        }
        Command::Verify { filter } => {
            let results = run_checks(filter.as_deref());
            let mut failed = 0;
            for (id, outcome) in &results {
                match outcome {
                    Ok(o) if o.passed => println!("PASS {id}: {}", o.detail),
                    Ok(o) => {
                        failed += 1;
                        println!("FAIL {id}: {}", o.detail);
                    }
                    Err(e) => {
                        failed += 1;
                        println!("FAIL {id}: error {e}");
                    }
                }
            }
            if results.is_empty() {
                return Err(Error::InvalidConfig("no checks match the filter".into()).into());
            }
            println!("{} of {} checks passed", results.len() - failed, results.len());
            if failed > 0 {
                return Err(Failure::Checks(failed));
            }
        }
    }
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::InvalidConfig(e.to_string())
}

fn run_command(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if args.exact {
        cfg.estimator = EstimatorKind::Exact;
    } else if args.sampled && cfg.estimator == EstimatorKind::Exact {
        cfg.estimator = EstimatorKind::Bce;
    }
    cfg.validate()?;
    let rows = run_experiment(&cfg, args.jobs, args.timing)?;
    match args.out.or(cfg.output.clone()) {
        Some(path) => {
            write_metrics(&rows, &path)?;
            log::info!("{} rows written to {}", rows.len(), path.display());
        }
        None => write_metrics_to(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_config_is_a_validation_error() {
        assert_eq!(run(["nail-lab", "run", "--config", "/nonexistent/missing.json"]), 1);
    }

    #[test]
    fn bad_usage_exits_one() {
        assert_eq!(run(["nail-lab", "frobnicate"]), 1);
        assert_eq!(run(["nail-lab", "run"]), 1);
        assert_eq!(run(["nail-lab", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        assert_eq!(exit_code(&Error::SingularSystem), 2);
        assert_eq!(exit_code(&Error::Diverged { step: 3 }), 2);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 1);
    }
}
