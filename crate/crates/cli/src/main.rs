//! `qkin`: command-line driver for the kinetic-equation toolkit.
//!
//! Every subcommand reads an optional JSON config (unknown keys are
//! rejected), applies flag overrides, writes `resolved-config.json`, its
//! artifacts and a `manifest.json` of SHA-256 hashes into the output
//! directory. Exit codes: 0 success, 1 numerical failure, 2 configuration
//! error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{anderson, decay, diffusion, moment, relax, solve, uu};
use crate::config::{Eta, ModelName, Profile, RunConfig};
use crate::error::CliError;
use crate::output::Output;

#[derive(Parser)]
#[command(name = "qkin", version, about = "Kinetic equations for quantum many-particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults are used for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Long-time decay of the free propagator.
    DispersionDecay {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: Option<ModelName>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        tmax: Option<f64>,
    },
    /// Relaxation under the linear collision operator.
    LinearRelax {
        #[command(flatten)]
        common: Common,
        /// Nodes per axis.
        #[arg(long)]
        grid: Option<usize>,
        /// Smearing width or `auto`.
        #[arg(long)]
        eta: Option<Eta>,
        #[arg(long)]
        tmax: Option<f64>,
    },
    /// One evaluation of the Uehling-Uhlenbeck collision operator.
    UuApply {
        #[command(flatten)]
        common: Common,
        /// Distribution CSV with columns k1..kd,W.
        #[arg(long)]
        input: Option<PathBuf>,
        /// `gaussian:a=1,w=1` or `constant:1`.
        #[arg(long)]
        potential: Option<Profile>,
        /// -1 fermions, 1 bosons, 0 Boltzmann.
        #[arg(long, allow_negative_numbers = true)]
        theta: Option<i32>,
        /// Monte Carlo samples per checked node.
        #[arg(long)]
        validate_mc: Option<usize>,
    },
    /// Time integration of a kinetic equation.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Diffusion coefficient on an energy shell.
    Diffusion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        energy: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Disorder-averaged lattice dynamics against the kinetic solution.
    ValidateAnderson {
        #[command(flatten)]
        common: Common,
    },
    /// Moment of a quasifree state.
    QuasifreeMoment {
        #[command(flatten)]
        common: Common,
    },
}

/// Sets the worker count: `QKIN_THREADS`, then the config, then all cores.
fn configure_threads(from_config: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var("QKIN_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(|| {
            CliError::field("QKIN_THREADS", format!("must be a positive integer, got `{v}`"))
        })?),
        Err(_) => None,
    };
    let threads = env.or(from_config);
    if threads == Some(0) {
        return Err(CliError::field("threads", "must be positive"));
    }
    if let Some(n) = threads {
        // A second initialization only happens in-process and keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute<C: RunConfig>(
    name: &str,
    common: &Common,
    overrides: impl FnOnce(&mut C),
    run: impl FnOnce(&C, Option<&Path>, &mut Output) -> Result<String, CliError>,
) -> Result<(PathBuf, String), CliError> {
    let mut cfg: C = config::load(common.config.as_deref())?;
    overrides(&mut cfg);
    if let Some(seed) = common.seed {
        *cfg.seed_mut() = seed;
    }
    cfg.validate()?;
    configure_threads(cfg.threads())?;
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir().map(|p| config::resolve_relative(common.config.as_deref(), p)))
        .unwrap_or_else(|| PathBuf::from(format!("qkin-{name}")));
    let mut out = Output::create(&dir)?;
    out.write_json("resolved-config.json", &cfg)?;
    let summary = run(&cfg, common.config.as_deref(), &mut out)?;
    Ok((out.finish()?, summary))
}

fn dispatch(cmd: Command) -> Result<(PathBuf, String), CliError> {
    match cmd {
        Command::DispersionDecay { common, model, dim, tmax } => execute(
            "dispersion-decay",
            &common,
            |c: &mut decay::Config| {
                if let Some(v) = model {
                    c.model = v;
                }
                if let Some(v) = dim {
                    c.dim = v;
                }
                if let Some(v) = tmax {
                    c.tmax = v;
                }
            },
            |c, _, o| decay::run(c, o),
        ),
        Command::LinearRelax { common, grid, eta, tmax } => execute(
            "linear-relax",
            &common,
            |c: &mut relax::Config| {
                if let Some(v) = grid {
                    c.grid = v;
                }
                if let Some(v) = eta {
                    c.eta = v;
                }
                if let Some(v) = tmax {
                    c.solver.t_max = v;
                }
            },
            |c, _, o| relax::run(c, o),
        ),
        Command::UuApply { common, input, potential, theta, validate_mc } => {
            // A flag path is taken relative to the working directory, not the config.
            let input = input.map(|p| std::path::absolute(&p).unwrap_or(p));
            execute(
                "uu-apply",
                &common,
                |c: &mut uu::Config| {
                    if let Some(v) = input {
                        c.input = Some(v);
                    }
                    if let Some(v) = potential {
                        c.potential = v;
                    }
                    if let Some(v) = theta {
                        c.theta = v;
                    }
                    if let Some(v) = validate_mc {
                        c.validate_mc = v;
                    }
                },
                uu::run,
            )
        }
        Command::Solve { common } => execute("solve", &common, |_: &mut solve::Config| {}, |c, _, o| solve::run(c, o)),
        Command::Diffusion { common, energy, grid } => execute(
            "diffusion",
            &common,
            |c: &mut diffusion::Config| {
                if let Some(v) = energy {
                    c.energy = v;
                }
                if let Some(v) = grid {
                    c.grid = v;
                }
            },
            |c, _, o| diffusion::run(c, o),
        ),
        Command::ValidateAnderson { common } => execute(
            "validate-anderson",
            &common,
            |_: &mut anderson::Config| {},
            |c, _, o| anderson::run(c, o),
        ),
        Command::QuasifreeMoment { common } => execute(
            "quasifree-moment",
            &common,
            |_: &mut moment::Config| {},
            |c, _, o| moment::run(c, o),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok((dir, summary)) => {
            println!("{summary}");
            println!("results in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qkin: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
