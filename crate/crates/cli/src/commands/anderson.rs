use std::path::PathBuf;

use qkin::io::distribution_to_csv;
use qkin::microscopic::{
    gaussian_bump, kinetic_comparison, kinetic_reference, reference_eta, DisorderEnsemble,
    DisorderLaw, KineticComparisonReport, KineticConfig,
};
use serde::{Deserialize, Serialize};

use super::{names, run_config_fields, table};
use crate::config::{at_least, positive, RunConfig};
use crate::error::{CliError, FieldContext};
use crate::output::{gnuplot, Output};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub k0: Vec<f64>,
    pub sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub dim: usize,
    pub side: usize,
    pub n_real: usize,
    pub law: DisorderLaw,
    /// Momentum distribution of the random-phase initial states.
    pub initial: Bump,
    pub kinetic: KineticConfig,
    /// Writes the kinetic reference at every checkpoint.
    pub snapshots: bool,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dim: 3,
            side: 32,
            n_real: 50,
            law: DisorderLaw::GaussianUnit,
            initial: Bump {
                k0: vec![1.0, 0.0, 0.0],
                sigma: 0.5,
            },
            kinetic: KineticConfig::default(),
            snapshots: false,
            seed: 2024,
            threads: None,
            output_dir: None,
        }
    }
}

impl RunConfig for Config {
    run_config_fields!();

    fn validate(&self) -> Result<(), CliError> {
        at_least("n_real", self.n_real, 2)?;
        at_least("kinetic.block", self.kinetic.block, 1)?;
        positive("initial.sigma", self.initial.sigma)?;
        positive("kinetic.solver_tolerance", self.kinetic.solver_tolerance)?;
        if self.initial.k0.len() != self.dim {
            return Err(CliError::field("initial.k0", format!("needs {} components", self.dim)));
        }
        DisorderEnsemble::new(self.dim, self.side, 0.0, self.law, self.seed, self.n_real)
            .field("side")
            .map(|_| ())
    }
}

#[derive(Serialize)]
struct Report<'a> {
    #[serde(flatten)]
    comparison: &'a KineticComparisonReport,
    passed: bool,
}

pub fn run(cfg: &Config, out: &mut Output) -> Result<String, CliError> {
    let ens = DisorderEnsemble::new(cfg.dim, cfg.side, 0.0, cfg.law, cfg.seed, cfg.n_real).field("side")?;
    let grid = ens.momentum_grid().field("side")?;
    let w0 = gaussian_bump(grid, &cfg.initial.k0, cfg.initial.sigma).field("initial")?;
    let rep = kinetic_comparison(&ens, &w0, &cfg.kinetic).map_err(|e| match e {
        qkin::QkinError::InvalidParameter(_) | qkin::QkinError::BudgetExceeded { .. } => {
            CliError::field("kinetic", e)
        }
        other => out.numerical(other),
    })?;
    let mut rows = Vec::new();
    for (e, eps) in rep.epsilons.iter().enumerate() {
        for (t, tau) in rep.taus.iter().enumerate() {
            rows.push(vec![
                *eps,
                *tau,
                rep.distances[e][t],
                rep.statistical_errors[e][t],
                if rep.inconclusive[e][t] { 1.0 } else { 0.0 },
            ]);
        }
    }
    out.write(
        "distances.csv",
        table(&names(&["epsilon", "tau", "distance", "statistical_error", "inconclusive"]), rows).as_bytes(),
    )?;
    out.write(
        "distances.gp",
        gnuplot("distances.csv", "distance to the kinetic solution", "epsilon", "L1 distance", &[(3, "distance")], "xy")
            .as_bytes(),
    )?;
    if cfg.snapshots {
        let eta = match cfg.kinetic.eta {
            Some(e) => e,
            None => reference_eta(&w0).map_err(|e| out.numerical(e))?,
        };
        let reference = kinetic_reference(&w0, &rep.taus, eta, cfg.kinetic.solver_tolerance)
            .map_err(|e| out.numerical(e))?;
        for (t, values) in reference.into_iter().enumerate() {
            let w = w0.with_values(values).map_err(|e| out.numerical(e))?;
            out.write(&format!("snapshots/kinetic_tau_{t:02}.csv"), distribution_to_csv(&w).as_bytes())?;
        }
    }
    let passed = rep.passed();
    out.write_json(
        "report.json",
        &Report {
            comparison: &rep,
            passed,
        },
    )?;
    Ok(format!(
        "distances {:?}, decreasing {:?}, passed {passed}",
        rep.distances, rep.decreasing
    ))
}
