use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use qkin::collision_uu::{mc_oracle, UuOperator};
use qkin::io::{distribution_from_csv, distribution_to_csv};
use qkin::{Distribution, GridKind, MomentumGrid, Statistics};
use serde::{Deserialize, Serialize};

use super::{momentum_names, names, run_config_fields, table};
use crate::config::{
    at_least, momentum_grid, positive, resolve_relative, statistics_of_theta, GaussianTerm,
    Initial, ModelName, Profile, RunConfig,
};
use crate::error::{CliError, FieldContext};
use crate::output::Output;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Quadrature {
    /// Sphere reduction on a three-dimensional continuum box.
    Sphere { n_s: usize },
    /// Smeared energy delta on a lattice torus.
    Lattice { eta: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Distribution CSV (`k1..kd,W`); relative to the config file. When
    /// absent, `initial` is sampled on the grid described by `model`,
    /// `grid` and `half_width`.
    pub input: Option<PathBuf>,
    pub model: ModelName,
    pub dim: usize,
    pub grid: usize,
    pub half_width: f64,
    pub initial: Initial,
    pub theta: i32,
    pub potential: Profile,
    pub quadrature: Quadrature,
    pub projection: bool,
    /// Monte Carlo samples per checked node; 0 skips the check.
    pub validate_mc: usize,
    pub mc_nodes: usize,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            input: None,
            model: ModelName::Continuum,
            dim: 3,
            grid: 12,
            half_width: 6.0,
            initial: Initial::Gaussians {
                terms: vec![
                    GaussianTerm {
                        amplitude: 0.45,
                        center: vec![0.8, 0.0, 0.0],
                        sigma: 1.0,
                    },
                    GaussianTerm {
                        amplitude: 0.35,
                        center: vec![-0.6, 0.5, 0.0],
                        sigma: 0.75f64.sqrt(),
                    },
                ],
            },
            theta: -1,
            potential: Profile::Gaussian {
                amplitude: 1.0,
                width: 1.0,
            },
            quadrature: Quadrature::Sphere { n_s: 18 },
            projection: true,
            validate_mc: 0,
            mc_nodes: 3,
            seed: 0,
            threads: None,
            output_dir: None,
        }
    }
}

impl RunConfig for Config {
    run_config_fields!();

    fn validate(&self) -> Result<(), CliError> {
        statistics_of_theta(self.theta)?;
        match self.quadrature {
            Quadrature::Sphere { n_s } => at_least("quadrature.n_s", n_s, 2)?,
            Quadrature::Lattice { eta } => {
                positive("quadrature.eta", eta)?;
                if self.validate_mc > 0 {
                    return Err(CliError::field(
                        "validate_mc",
                        "the Monte Carlo check needs the sphere quadrature",
                    ));
                }
            }
        }
        if self.validate_mc == 1 {
            return Err(CliError::field("validate_mc", "needs at least 2 samples"));
        }
        if self.input.is_none() {
            at_least("grid", self.grid, 3)?;
            positive("half_width", self.half_width)?;
            self.model.build(self.dim, 1.0)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct McCheck {
    node: usize,
    k: Vec<f64>,
    quadrature: f64,
    mc_mean: f64,
    mc_stderr: f64,
    z: f64,
}

#[derive(Serialize)]
struct Invariants {
    mass: f64,
    momentum: Vec<f64>,
    energy: f64,
}

#[derive(Serialize)]
struct Report {
    nodes: usize,
    statistics: Statistics,
    l1_norm: f64,
    gain_scale: f64,
    sup_norm: f64,
    invariants: Invariants,
    entropy_production: f64,
    mc_density: Option<&'static str>,
    mc: Vec<McCheck>,
}

fn load_input(path: &Path, stats: Statistics) -> Result<Distribution, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    distribution_from_csv(BufReader::new(file), stats).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Trilinear interpolant of nodal values on a box grid, zero outside the
/// outermost nodes.
fn trilinear(grid: &MomentumGrid, values: &[f64], k: &[f64]) -> f64 {
    let n = grid.n();
    let h = grid.spacing();
    let first = grid.axis()[0];
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let x = (k[a] - first) / h;
        if !(0.0..=(n - 1) as f64).contains(&x) {
            return 0.0;
        }
        let j = (x.floor() as usize).min(n - 2);
        base[a] = j;
        frac[a] = x - j as f64;
    }
    let mut s = 0.0;
    for corner in 0..8 {
        let mut wgt = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let up = (corner >> (2 - a)) & 1;
            idx[a] = base[a] + up;
            wgt *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        s += wgt * values[grid.flat_index(&idx)];
    }
    s
}

pub fn run(cfg: &Config, config_path: Option<&Path>, out: &mut Output) -> Result<String, CliError> {
    let stats = statistics_of_theta(cfg.theta)?;
    let (w, closed_form) = match &cfg.input {
        Some(p) => (load_input(&resolve_relative(config_path, p), stats)?, None),
        None => {
            let model = cfg.model.build(cfg.dim, 1.0)?;
            let grid = momentum_grid(&model, cfg.grid, cfg.half_width)?;
            let f = cfg.initial.momentum_fn(&model, stats)?;
            let w = cfg.initial.distribution(&model, grid, stats)?;
            (w, Some(f))
        }
    };
    let grid = w.grid().clone();
    let dim = grid.dim();
    let model = if grid.kind() == GridKind::TorusUniform {
        ModelName::Lattice.build(dim, 1.0)?
    } else {
        ModelName::Continuum.build(dim, 1.0)?
    };
    let op = match cfg.quadrature {
        Quadrature::Sphere { n_s } => {
            UuOperator::continuum(grid.clone(), &model, cfg.potential.pair_potential(), stats, n_s)
        }
        Quadrature::Lattice { eta } => {
            UuOperator::lattice(grid.clone(), &model, cfg.potential.pair_potential(), stats, eta)
        }
    }
    .field("quadrature")?
    .with_projection(cfg.projection);

    let terms = op.terms(&w).map_err(|e| out.numerical(e))?;
    let c = &terms.collision;
    let wt = grid.uniform_weight();
    let omegas = grid.omegas(&model).field("input")?;
    let invariants = Invariants {
        mass: wt * c.iter().sum::<f64>(),
        momentum: (0..dim)
            .map(|a| wt * (0..c.len()).map(|i| grid.moment_coordinate(i, a) * c[i]).sum::<f64>())
            .collect(),
        energy: wt * c.iter().zip(&omegas).map(|(x, o)| x * o).sum::<f64>(),
    };
    let entropy_production = op.entropy_production(&w).map_err(|e| out.numerical(e))?;

    let mut mc = Vec::new();
    let mut mc_density = None;
    if cfg.validate_mc > 0 {
        let interp = |k: &[f64]| trilinear(&grid, w.values(), k);
        let density: &(dyn Fn(&[f64]) -> f64 + Sync) = match &closed_form {
            Some(f) => {
                mc_density = Some("closed_form");
                f.as_ref()
            }
            None => {
                mc_density = Some("trilinear");
                &interp
            }
        };
        let inner = 0.5 * grid.half_width();
        let mut candidates: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.node(i).iter().all(|x| x.abs() <= inner))
            .collect();
        candidates.sort_by(|&a, &b| terms.raw[b].abs().total_cmp(&terms.raw[a].abs()).then(a.cmp(&b)));
        for (r, &i) in candidates.iter().take(cfg.mc_nodes).enumerate() {
            let (g, l) = op.terms_at(w.values(), i).map_err(|e| out.numerical(e))?;
            let k = grid.node(i).to_vec();
            let est = mc_oracle(
                density,
                op.potential(),
                stats,
                &k,
                grid.half_width(),
                cfg.validate_mc,
                cfg.seed.wrapping_add(r as u64),
            )
            .map_err(|e| out.numerical(e))?;
            let quad = g - l;
            mc.push(McCheck {
                node: i,
                k,
                quadrature: quad,
                mc_mean: est.mean,
                mc_stderr: est.stderr,
                z: (quad - est.mean) / est.stderr,
            });
        }
    }

    out.write("distribution.csv", distribution_to_csv(&w).as_bytes())?;
    let mut header = momentum_names("k", dim);
    header.push("C".into());
    out.write(
        "collision.csv",
        table(&header, (0..grid.len()).map(|i| {
            let mut row = grid.node(i).to_vec();
            row.push(c[i]);
            row
        }))
        .as_bytes(),
    )?;
    let mut header = momentum_names("k", dim);
    header.extend(names(&["gain", "loss", "raw"]));
    out.write(
        "terms.csv",
        table(&header, (0..grid.len()).map(|i| {
            let mut row = grid.node(i).to_vec();
            row.extend([terms.gain[i], terms.loss[i], terms.raw[i]]);
            row
        }))
        .as_bytes(),
    )?;
    let report = Report {
        nodes: grid.len(),
        statistics: stats,
        l1_norm: wt * c.iter().map(|x| x.abs()).sum::<f64>(),
        gain_scale: terms.gain.iter().cloned().fold(0.0, f64::max),
        sup_norm: c.iter().map(|x| x.abs()).fold(0.0, f64::max),
        invariants,
        entropy_production,
        mc_density,
        mc,
    };
    out.write_json("report.json", &report)?;
    let mut msg = format!(
        "|C|_1 = {:.6e}, entropy production {:.6e}",
        report.l1_norm, report.entropy_production
    );
    if let Some(worst) = report.mc.iter().map(|m| m.z.abs()).reduce(f64::max) {
        msg.push_str(&format!(", Monte Carlo max |z| = {worst:.2}"));
    }
    Ok(msg)
}
