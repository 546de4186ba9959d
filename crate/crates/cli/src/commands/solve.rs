use std::path::PathBuf;

use qkin::collision_linear::CollisionMatrix;
use qkin::collision_uu::{entropy_of, UuOperator};
use qkin::io::{write_distribution_binary, write_wigner_binary};
use qkin::transport::{
    solve_homogeneous, solve_inhomogeneous, CollisionOperator, FlightScheme, SolverConfig,
    ZeroCollision,
};
use qkin::{moments_of, DispersionModel, Distribution, MomentumGrid, SpatialGrid, Statistics, WignerField};
use serde::{Deserialize, Serialize};

use super::uu::Quadrature;
use super::{momentum_names, names, run_config_fields, table};
use crate::config::{at_least, momentum_grid, positive, Eta, Initial, ModelName, Profile, RunConfig};
use crate::error::{CliError, FieldContext};
use crate::output::{gnuplot, Output};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Collision {
    None,
    Linear {
        spectrum: Profile,
        #[serde(default)]
        eta: Eta,
    },
    Uu {
        potential: Profile,
        quadrature: Quadrature,
        #[serde(default = "yes")]
        projection: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spatial {
    /// Cells per spatial axis.
    pub cells: usize,
    pub side: f64,
    /// Momentum components the spatial axes follow; defaults to the first
    /// `dim` axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelName,
    pub dim: usize,
    pub gap: f64,
    pub grid: usize,
    pub half_width: f64,
    pub statistics: Statistics,
    pub collision: Collision,
    pub initial: Initial,
    /// Phase-space run with free flight when present.
    pub spatial: Option<Spatial>,
    pub flight: FlightScheme,
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
            grid: 4,
            half_width: 6.0,
            statistics: Statistics::Fermion,
            collision: Collision::Uu {
                potential: Profile::Gaussian {
                    amplitude: 1.0,
                    width: 2.0,
                },
                quadrature: Quadrature::Lattice { eta: 0.5 },
                projection: true,
            },
            initial: Initial::TwoTemperature {
                t_low: 0.5,
                t_high: 3.0,
                mu: 3.0,
                fraction: 0.5,
            },
            spatial: None,
            flight: FlightScheme::Linear,
            solver: SolverConfig {
                t_max: 5.0,
                snapshot_every: 1.0,
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
        self.model.build(self.dim, self.gap)?;
        if let Some(s) = &self.spatial {
            at_least("spatial.cells", s.cells, 2)?;
            positive("spatial.side", s.side)?;
            if let Some(axes) = &s.axes {
                if axes.is_empty() || axes.iter().any(|&a| a >= self.dim) {
                    return Err(CliError::field("spatial.axes", format!("{axes:?} is not a subset of 0..{}", self.dim)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Report {
    nodes: usize,
    cells: usize,
    statistics: Statistics,
    eta: Option<f64>,
    steps: usize,
    accepted_steps: Option<usize>,
    rejected_steps: Option<usize>,
    mass_drift: f64,
    max_entropy_decrease: f64,
    min_value: f64,
    max_value: f64,
    initial_entropy: f64,
    final_entropy: f64,
    snapshots: Vec<String>,
}

struct Row {
    t: f64,
    mass: f64,
    momentum: Vec<f64>,
    energy: f64,
    entropy: f64,
}

fn build_operator(
    cfg: &Config,
    grid: &std::sync::Arc<MomentumGrid>,
    model: &DispersionModel,
    w0: &Distribution,
) -> Result<(Box<dyn CollisionOperator>, Option<f64>), CliError> {
    Ok(match &cfg.collision {
        Collision::None => (
            Box::new(ZeroCollision {
                len: grid.len(),
                stats: cfg.statistics,
            }),
            None,
        ),
        Collision::Linear { spectrum, eta } => {
            let mo = w0.moments(model).field("initial")?;
            if !(mo.mass > 0.0) {
                return Err(CliError::field("initial", "initial distribution has zero mass"));
            }
            let eta = eta.resolve(grid, model, mo.energy / mo.mass)?;
            let m = CollisionMatrix::build(grid.clone(), model, spectrum.spectrum(), eta)
                .field("collision")?;
            (Box::new(m), Some(eta))
        }
        Collision::Uu {
            potential,
            quadrature,
            projection,
        } => {
            let op = match *quadrature {
                Quadrature::Sphere { n_s } => {
                    UuOperator::continuum(grid.clone(), model, potential.pair_potential(), cfg.statistics, n_s)
                }
                Quadrature::Lattice { eta } => {
                    UuOperator::lattice(grid.clone(), model, potential.pair_potential(), cfg.statistics, eta)
                }
            }
            .field("collision")?
            .with_projection(*projection);
            let eta = match quadrature {
                Quadrature::Lattice { eta } => Some(*eta),
                Quadrature::Sphere { .. } => None,
            };
            (Box::new(op), eta)
        }
    })
}

fn row(
    t: f64,
    grid: &MomentumGrid,
    model: &DispersionModel,
    values: &[f64],
    entropy: f64,
) -> Result<Row, qkin::QkinError> {
    let mo = moments_of(grid, model, values)?;
    Ok(Row {
        t,
        mass: mo.mass,
        momentum: mo.momentum,
        energy: mo.energy,
        entropy,
    })
}

pub fn run(cfg: &Config, out: &mut Output) -> Result<String, CliError> {
    let model = cfg.model.build(cfg.dim, cfg.gap)?;
    let grid = momentum_grid(&model, cfg.grid, cfg.half_width)?;
    let stats = cfg.statistics;
    let w0 = cfg.initial.distribution(&model, grid.clone(), stats)?;
    let (op, eta) = build_operator(cfg, &grid, &model, &w0)?;
    let wt = grid.uniform_weight();
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let report = match &cfg.spatial {
        None => {
            let traj = solve_homogeneous(&w0, op.as_ref(), &cfg.solver).map_err(|e| out.numerical(e))?;
            for (s, (t, v)) in traj.times.iter().zip(&traj.snapshots).enumerate() {
                let w = w0.with_values(v.clone()).map_err(|e| out.numerical(e))?;
                let mut bytes = Vec::new();
                write_distribution_binary(&mut bytes, &w).map_err(|e| out.numerical(e))?;
                let name = format!("snapshots/snapshot_{s:04}.bin");
                out.write(&name, &bytes)?;
                snapshots.push(name);
                for x in v {
                    lo = lo.min(*x);
                    hi = hi.max(*x);
                }
                let r = row(*t, &grid, &model, v, entropy_of(wt, v, stats)).map_err(|e| out.numerical(e))?;
                rows.push(r);
            }
            Report {
                nodes: grid.len(),
                cells: 1,
                statistics: stats,
                eta,
                steps: traj.accepted,
                accepted_steps: Some(traj.accepted),
                rejected_steps: Some(traj.rejected),
                mass_drift: traj.mass_drift,
                max_entropy_decrease: traj.max_entropy_decrease,
                min_value: lo,
                max_value: hi,
                initial_entropy: rows[0].entropy,
                final_entropy: rows[rows.len() - 1].entropy,
                snapshots,
            }
        }
        Some(sp) => {
            let axes = sp.axes.clone().unwrap_or_else(|| (0..cfg.dim).collect());
            let spatial = SpatialGrid::with_axes(sp.cells, sp.side, axes).field("spatial")?;
            let f0 = WignerField::from_fn(spatial.clone(), grid.clone(), stats, |r, _| {
                cfg.initial.spatial_factor(r, sp.side)
            })
            .and_then(|shape| {
                let nk = grid.len();
                let values = shape
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s * w0.values()[i % nk])
                    .collect();
                WignerField::new(spatial.clone(), grid.clone(), values, stats)
            })
            .field("initial")?;
            let vol = spatial.cell_volume();
            let nk = grid.len();
            let mut failure = None;
            let mut max_dec: f64 = 0.0;
            let mut pending = Vec::new();
            let mut observe = |t: f64, f: &WignerField| {
                if failure.is_some() {
                    return;
                }
                let mut total = vec![0.0; nk];
                let mut s = 0.0;
                for c in 0..spatial.cells() {
                    let cell = f.cell(c);
                    for (acc, v) in total.iter_mut().zip(cell) {
                        *acc += vol * v;
                    }
                    s += vol * entropy_of(wt, cell, stats);
                }
                for x in f.values() {
                    lo = lo.min(*x);
                    hi = hi.max(*x);
                }
                let mut bytes = Vec::new();
                if let Err(e) = write_wigner_binary(&mut bytes, f) {
                    failure = Some(e);
                    return;
                }
                let name = format!("snapshots/snapshot_{:04}.bin", pending.len());
                match row(t, &grid, &model, &total, s) {
                    Ok(r) => {
                        if let Some(prev) = rows.last() {
                            max_dec = max_dec.max(prev.entropy - r.entropy);
                        }
                        rows.push(r)
                    }
                    Err(e) => failure = Some(e),
                }
                pending.push((name, bytes));
            };
            let (_, traj) = solve_inhomogeneous(&f0, op.as_ref(), &model, &cfg.solver, cfg.flight, &mut observe)
                .map_err(|e| out.numerical(e))?;
            if let Some(e) = failure {
                return Err(out.numerical(e));
            }
            for (name, bytes) in pending {
                out.write(&name, &bytes)?;
                snapshots.push(name);
            }
            Report {
                nodes: nk,
                cells: spatial.cells(),
                statistics: stats,
                eta,
                steps: traj.steps,
                accepted_steps: None,
                rejected_steps: None,
                mass_drift: traj.mass_drift,
                max_entropy_decrease: max_dec,
                min_value: lo,
                max_value: hi,
                initial_entropy: rows[0].entropy,
                final_entropy: rows[rows.len() - 1].entropy,
                snapshots,
            }
        }
    };
    let mut header = names(&["t", "mass"]);
    header.extend(momentum_names("p", cfg.dim));
    header.extend(names(&["energy", "entropy"]));
    out.write(
        "moments.csv",
        table(&header, rows.iter().map(|r| {
            let mut v = vec![r.t, r.mass];
            v.extend(&r.momentum);
            v.extend([r.energy, r.entropy]);
            v
        }))
        .as_bytes(),
    )?;
    let entropy_col = 4 + cfg.dim;
    out.write(
        "entropy.gp",
        gnuplot("moments.csv", "entropy", "t", "entropy", &[(entropy_col, "entropy")], "").as_bytes(),
    )?;
    out.write_json("report.json", &report)?;
    Ok(format!(
        "{} snapshots, mass drift {:.3e}, entropy {:.6} -> {:.6}",
        report.snapshots.len(),
        report.mass_drift,
        report.initial_entropy,
        report.final_entropy
    ))
}
