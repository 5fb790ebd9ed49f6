//! `fer-er`: command-line experiments for entanglement renormalization of
//! quadratic fermion lattices.
//!
//! Exit codes: 0 success, 2 configuration error, 3 an optimisation did not
//! converge (results are still written), 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{extract_overrides, parse_assignment, ExperimentConfig};

const THREADS_ENV: &str = "FER_ER_THREADS";

#[derive(Parser)]
#[command(name = "fer-er", version, about = "Entanglement renormalization of free-fermion lattices")]
#[command(after_help = "Any config field can be overridden with a dotted path, e.g. --flow.levels=6 --model.lambda=1.1")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults describe the critical Ising chain.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputs.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Anti-periodic boundary conditions.
    #[arg(long)]
    anti_periodic: bool,
    /// Also write the level-0 block geometry as JSON.
    #[arg(long)]
    dump_geometry: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Exact ground state: energy and entropy scan.
    GroundState {
        #[command(flatten)]
        common: Common,
    },
    /// Run the RG flow and write per-level reports.
    RgRun {
        #[command(flatten)]
        common: Common,
        /// Keep every disentangler at the identity.
        #[arg(long)]
        no_disentanglers: bool,
        /// Run a second flow with these overrides (KEY=VALUE, repeatable)
        /// and report the distance between the two level by level.
        #[arg(long, value_parser = parse_assignment)]
        compare: Vec<(String, String)>,
    },
    /// Compare reconstructed two-point functions with the exact ones.
    Correlators {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_disentanglers: bool,
    },
    /// `rg-run` over a list of values of one config field.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path to vary.
        #[arg(long)]
        param: String,
        /// Comma-separated values (JSON or plain strings).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Configurations run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn load(common: &Common, overrides: &[(String, String)], extra: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let mut all = overrides.to_vec();
    if let Some(out) = &common.out {
        all.push(("outputs.dir".into(), serde_json::to_string(out).map_err(|e| Failure::Config(e.into()))?));
    }
    if common.anti_periodic {
        all.push(("model.zero_mode".into(), "\"anti_periodic\"".into()));
    }
    all.extend_from_slice(extra);
    ExperimentConfig::load(common.config.as_deref(), &all).map_err(Failure::Config)
}

fn flag(on: bool) -> Vec<(String, String)> {
    if on {
        vec![("flow.no_disentanglers".into(), "true".into())]
    } else {
        Vec::new()
    }
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<bool, Failure> {
    let geometry = |c: &ExperimentConfig, common: &Common| -> Result<(), Failure> {
        if common.dump_geometry {
            commands::dump_geometry(c).map_err(Failure::Run)?;
        }
        Ok(())
    };
    match cli.command {
        Command::GroundState { common } => {
            let c = load(&common, overrides, &[])?;
            geometry(&c, &common)?;
            commands::ground_state_cmd(&c).map_err(Failure::Run)
        }
        Command::RgRun { common, no_disentanglers, compare } => {
            let c = load(&common, overrides, &flag(no_disentanglers))?;
            geometry(&c, &common)?;
            let other = if compare.is_empty() {
                None
            } else {
                Some(c.with_overrides(&compare).map_err(Failure::Config)?)
            };
            commands::rg_run(&c, other.as_ref()).map_err(Failure::Run)
        }
        Command::Correlators { common, no_disentanglers } => {
            let c = load(&common, overrides, &flag(no_disentanglers))?;
            geometry(&c, &common)?;
            commands::check_correlators(&c).map_err(Failure::Config)?;
            commands::correlators_cmd(&c).map_err(Failure::Run)
        }
        Command::Sweep { common, param, values, jobs } => {
            let base = load(&common, overrides, &[])?;
            geometry(&base, &common)?;
            let configs: Vec<ExperimentConfig> = values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let dir = base.outputs.dir.join(format!("{i:03}_{param}={v}"));
                    let dir = serde_json::to_string(&dir).map_err(|e| Failure::Config(e.into()))?;
                    base.with_overrides(&[(param.clone(), v.clone()), ("outputs.dir".into(), dir)])
                        .map_err(Failure::Config)
                })
                .collect::<Result<_, _>>()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Failure::Run(e.into()))?;
            let results: Vec<Result<bool>> = pool.install(|| configs.par_iter().map(|c| commands::rg_run(c, None)).collect());
            let mut all = true;
            for r in results {
                all &= r.map_err(Failure::Run)?;
            }
            Ok(all)
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = extract_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli, &overrides) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: at least one optimisation stopped before converging");
            ExitCode::from(3)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
