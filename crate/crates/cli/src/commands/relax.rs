use std::path::PathBuf;

use qkin::collision_linear::{relax_to_shell, CollisionMatrix};
use qkin::io::distribution_to_csv;
use qkin::transport::{ShellGenerator, SolverConfig};
use qkin::Statistics;
use serde::{Deserialize, Serialize};

use super::{names, run_config_fields, table};
use crate::config::{at_least, momentum_grid, positive, Eta, Initial, ModelName, Profile, RunConfig};
use crate::error::{CliError, FieldContext};
use crate::output::{gnuplot, Output};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelName,
    pub dim: usize,
    pub gap: f64,
    /// Nodes per axis.
    pub grid: usize,
    /// Box half-width for non-periodic models.
    pub half_width: f64,
    pub spectrum: Profile,
    pub eta: Eta,
    pub initial: Initial,
    pub solver: SolverConfig,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelName::Lattice,
            dim: 3,
            gap: 1.0,
            grid: 16,
            half_width: 6.0,
            spectrum: Profile::Constant { value: 1.0 },
            eta: Eta::Auto,
            initial: Initial::Bump {
                r0: None,
                sigma_r: 1.0,
                k0: vec![1.0, 0.0, 0.0],
                sigma_k: 0.5,
                amplitude: 1.0,
            },
            solver: SolverConfig {
                t_max: 50.0,
                snapshot_every: 5.0,
                ..SolverConfig::default()
            },
            seed: 0,
            threads: None,
            output_dir: None,
        }
    }
}

impl RunConfig for Config {
    run_config_fields!();

    fn validate(&self) -> Result<(), CliError> {
        at_least("grid", self.grid, 2)?;
        positive("half_width", self.half_width)?;
        self.solver.validate().field("solver")?;
        self.model.build(self.dim, self.gap).map(|_| ())
    }
}

#[derive(Serialize)]
struct Report {
    eta: f64,
    storage: &'static str,
    nodes: usize,
    accepted_steps: usize,
    rejected_steps: usize,
    mass_drift: f64,
    energy_drift: f64,
    shell_variance_curve: Vec<(f64, f64)>,
    spectral_gap_estimate: f64,
}

pub fn run(cfg: &Config, out: &mut Output) -> Result<String, CliError> {
    let model = cfg.model.build(cfg.dim, cfg.gap)?;
    let grid = momentum_grid(&model, cfg.grid, cfg.half_width)?;
    let w0 = cfg.initial.distribution(&model, grid.clone(), Statistics::Boltzmann)?;
    let mo = w0.moments(&model).field("initial")?;
    if !(mo.mass > 0.0) {
        return Err(CliError::field("initial", "initial distribution has zero mass"));
    }
    let eta = cfg.eta.resolve(&grid, &model, mo.energy / mo.mass)?;
    let m = CollisionMatrix::build(grid, &model, cfg.spectrum.spectrum(), eta).field("spectrum")?;
    let (traj, rep) = relax_to_shell(&m, &w0, &cfg.solver).map_err(|e| out.numerical(e))?;
    for (s, values) in traj.snapshots.iter().enumerate() {
        let w = w0.with_values(values.clone()).map_err(|e| out.numerical(e))?;
        out.write(&format!("snapshots/snapshot_{s:04}.csv"), distribution_to_csv(&w).as_bytes())?;
    }
    let curve: Vec<(f64, f64)> = rep.times.iter().copied().zip(rep.shell_variance.iter().copied()).collect();
    out.write(
        "shell_variance.csv",
        table(&names(&["t", "shell_variance"]), curve.iter().map(|(t, v)| vec![*t, *v])).as_bytes(),
    )?;
    out.write(
        "shell_variance.gp",
        gnuplot("shell_variance.csv", "relaxation to the energy shell", "t", "shell variance", &[(2, "variance")], "y")
            .as_bytes(),
    )?;
    // Gap of -M on the shell at the mean energy of W0.
    let gap = ShellGenerator::from_matrix(&m, mo.energy / mo.mass)
        .map_err(|e| out.numerical(e))?
        .gap();
    let report = Report {
        eta,
        storage: m.storage_name(),
        nodes: m.len(),
        accepted_steps: traj.accepted,
        rejected_steps: traj.rejected,
        mass_drift: rep.mass_drift,
        energy_drift: rep.energy_drift,
        shell_variance_curve: curve,
        spectral_gap_estimate: gap,
    };
    out.write_json("report.json", &report)?;
    Ok(format!(
        "eta {eta:.4}, mass drift {:.3e}, energy drift {:.3e}, gap {gap:.4e}",
        rep.mass_drift, rep.energy_drift
    ))
}
