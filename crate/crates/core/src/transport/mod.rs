//! Time integration of the kinetic equations.

mod diffusion;
mod flight;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::collision_uu::entropy_of;
use crate::error::{QkinError, Result};
use crate::grids::{first_inadmissible, Distribution, Statistics};
use crate::stats::linear_fit;

pub use diffusion::{
    diffusion_coefficient, diffusion_eta_ladder, msd_diffusion, DiffusionMethod, DiffusionReport,
    EtaLadderReport, GreenKuboTrace, MsdConfig, MsdReport, ShellGenerator,
};
pub use flight::{free_flight, solve_inhomogeneous, FlightScheme, InhomogeneousTrajectory};

/// A collision term `C(W)` acting on per-node values.
#[allow(clippy::len_without_is_empty)]
pub trait CollisionOperator: Sync {
    fn len(&self) -> usize;

    fn statistics(&self) -> Statistics;

    fn apply_values(&self, w: &[f64]) -> Result<Vec<f64>>;

    /// `exp(dt C)` for linear operators, when it is cheap enough to form.
    fn linear_propagator(&self, _dt: f64) -> Option<Result<LinearPropagator>> {
        None
    }
}

/// `C = 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroCollision {
    pub len: usize,
    pub stats: Statistics,
}

impl CollisionOperator for ZeroCollision {
    fn len(&self) -> usize {
        self.len
    }

    fn statistics(&self) -> Statistics {
        self.stats
    }

    fn apply_values(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; w.len()])
    }

    fn linear_propagator(&self, _dt: f64) -> Option<Result<LinearPropagator>> {
        Some(Ok(LinearPropagator::new(Vec::new(), DMatrix::zeros(0, 0))))
    }
}

/// Dense `exp(dt C)` restricted to `active` nodes; other nodes are left
/// unchanged.
#[derive(Clone, Debug)]
pub struct LinearPropagator {
    active: Vec<usize>,
    matrix: DMatrix<f64>,
}

impl LinearPropagator {
    pub fn new(active: Vec<usize>, matrix: DMatrix<f64>) -> Self {
        Self { active, matrix }
    }

    /// Applies the propagator to every column block of `values`, each of
    /// length `n_nodes`.
    pub fn apply_cells(&self, values: &mut [f64], n_nodes: usize) {
        let na = self.active.len();
        if na == 0 {
            return;
        }
        let cells = values.len() / n_nodes;
        let mut block = DMatrix::<f64>::zeros(na, cells);
        for c in 0..cells {
            for (a, &i) in self.active.iter().enumerate() {
                block[(a, c)] = values[c * n_nodes + i];
            }
        }
        let out = &self.matrix * block;
        for c in 0..cells {
            for (a, &i) in self.active.iter().enumerate() {
                values[c * n_nodes + i] = out[(a, c)];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    Lie,
    Strang,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub tolerance: f64,
    pub t_max: f64,
    pub snapshot_every: f64,
    pub splitting: Splitting,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            dt_min: 1e-10,
            dt_max: f64::INFINITY,
            tolerance: 1e-8,
            t_max: 1.0,
            snapshot_every: 1.0,
            splitting: Splitting::Strang,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt
            && self.dt <= self.dt_max
            && self.tolerance > 0.0
            && self.t_max >= 0.0
            && self.snapshot_every > 0.0
            && self.t_max.is_finite();
        if !ok {
            return Err(QkinError::InvalidParameter(format!(
                "solver config needs 0 < dt_min <= dt <= dt_max, tolerance > 0, t_max >= 0, snapshot_every > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub(crate) fn snapshot_times(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let n = (self.t_max / self.snapshot_every - 1e-9).ceil().max(0.0) as usize;
        for i in 1..=n {
            out.push((i as f64 * self.snapshot_every).min(self.t_max));
        }
        if *out.last().unwrap() < self.t_max {
            out.push(self.t_max);
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub accepted: usize,
    pub rejected: usize,
    pub mass_drift: f64,
    /// Largest single-step entropy decrease (0 if entropy never decreased).
    pub max_entropy_decrease: f64,
}

pub(crate) struct Stepper<'a, C: CollisionOperator + ?Sized> {
    op: &'a C,
    cfg: &'a SolverConfig,
    pub dt: f64,
    pub accepted: usize,
    pub rejected: usize,
}

enum Attempt {
    Accepted(Vec<f64>, f64),
    Rejected(String),
}

impl<'a, C: CollisionOperator + ?Sized> Stepper<'a, C> {
    pub fn new(op: &'a C, cfg: &'a SolverConfig) -> Self {
        Self {
            op,
            cfg,
            dt: cfg.dt,
            accepted: 0,
            rejected: 0,
        }
    }

    fn rhs(&self, y: &[f64]) -> Result<Option<Vec<f64>>> {
        match self.op.apply_values(y) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(Some(v)),
            Ok(_) | Err(QkinError::Invariant(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn rk4(&self, y: &[f64], k1: &[f64], h: f64) -> Result<Option<Vec<f64>>> {
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(u, v)| u + a * v).collect() };
        let Some(k2) = self.rhs(&axpy(0.5 * h, k1))? else { return Ok(None) };
        let Some(k3) = self.rhs(&axpy(0.5 * h, &k2))? else { return Ok(None) };
        let Some(k4) = self.rhs(&axpy(h, &k3))? else { return Ok(None) };
        Ok(Some(
            (0..y.len())
                .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect(),
        ))
    }

    /// One step-doubling attempt of size `h`; returns the two-half-step
    /// result and the error ratio.
    fn attempt(&self, y: &[f64], h: f64) -> Result<Attempt> {
        let Some(k1) = self.rhs(y)? else {
            return Ok(Attempt::Rejected("collision term undefined at the current state".into()));
        };
        let Some(full) = self.rk4(y, &k1, h)? else {
            return Ok(Attempt::Rejected("inadmissible stage".into()));
        };
        let Some(mid) = self.rk4(y, &k1, 0.5 * h)? else {
            return Ok(Attempt::Rejected("inadmissible stage".into()));
        };
        let Some(k1m) = self.rhs(&mid)? else {
            return Ok(Attempt::Rejected("inadmissible stage".into()));
        };
        let Some(half) = self.rk4(&mid, &k1m, 0.5 * h)? else {
            return Ok(Attempt::Rejected("inadmissible stage".into()));
        };
        let scale = self.cfg.tolerance * (1.0 + y.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        let err = half
            .iter()
            .zip(&full)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()))
            / 15.0;
        let ratio = err / scale;
        if !ratio.is_finite() {
            return Ok(Attempt::Rejected("non-finite error estimate".into()));
        }
        if let Some((i, w)) = first_inadmissible(self.op.statistics(), &half) {
            return Ok(Attempt::Rejected(format!(
                "value {w} at node {i} violates admissibility"
            )));
        }
        Ok(Attempt::Accepted(half, ratio))
    }

    /// Advances `y` from `t` to `t_end`, calling `hook` after each accepted
    /// step.
    pub fn advance(
        &mut self,
        y: &mut Vec<f64>,
        t: &mut f64,
        t_end: f64,
        hook: &mut dyn FnMut(f64, f64, &[f64]),
    ) -> Result<()> {
        while *t < t_end {
            if self.accepted + self.rejected >= self.cfg.max_steps {
                return Err(QkinError::Numerical(format!(
                    "step budget of {} exhausted at t = {t}",
                    self.cfg.max_steps
                )));
            }
            let remaining = t_end - *t;
            let landing = self.dt >= remaining * (1.0 - 1e-12);
            let h = if landing { remaining } else { self.dt };
            match self.attempt(y, h)? {
                Attempt::Accepted(next, ratio) if ratio <= 1.0 => {
                    *y = next;
                    *t = if landing { t_end } else { *t + h };
                    self.accepted += 1;
                    hook(*t, h, y);
                    let grow = if ratio == 0.0 { 2.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 2.0) };
                    if !landing || h >= self.dt {
                        self.dt = (h * grow).min(self.cfg.dt_max);
                    }
                }
                outcome => {
                    self.rejected += 1;
                    let (shrink, reason) = match outcome {
                        Attempt::Accepted(_, ratio) => (
                            (0.9 * ratio.powf(-0.25)).clamp(0.1, 0.5),
                            format!("error ratio {ratio:.3e}"),
                        ),
                        Attempt::Rejected(r) => (0.5, r),
                    };
                    self.dt = h * shrink;
                    if self.dt < self.cfg.dt_min {
                        return Err(QkinError::StepUnderflow {
                            t: *t,
                            dt_min: self.cfg.dt_min,
                            reason,
                            snapshot: Box::new(y.clone()),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adaptive RK4 solution of `dW/dt = C(W)` with snapshots at multiples of
/// `cfg.snapshot_every`.
pub fn solve_homogeneous<C: CollisionOperator + ?Sized>(
    w0: &Distribution,
    op: &C,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if op.len() != w0.values().len() {
        return Err(QkinError::LengthMismatch {
            expected: op.len(),
            got: w0.values().len(),
        });
    }
    let stats = w0.statistics();
    let wt = w0.grid().uniform_weight();
    let mass = |v: &[f64]| wt * v.iter().sum::<f64>();
    let m0 = mass(w0.values());
    let s0 = entropy_of(wt, w0.values(), stats);
    let mut y = w0.values().to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut snapshots = vec![y.clone()];
    let mut steps = Vec::new();
    let mut last_entropy = s0;
    let mut max_decrease: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut stepper = Stepper::new(op, cfg);
    for &ts in &cfg.snapshot_times()[1..] {
        let mut hook = |tt: f64, h: f64, v: &[f64]| {
            let m = mass(v);
            let s = entropy_of(wt, v, stats);
            drift = drift.max((m - m0).abs());
            max_decrease = max_decrease.max(last_entropy - s);
            last_entropy = s;
            steps.push(StepRecord {
                t: tt,
                dt: h,
                mass: m,
                entropy: s,
            });
        };
        stepper.advance(&mut y, &mut t, ts, &mut hook)?;
        times.push(ts);
        snapshots.push(y.clone());
    }
    Ok(Trajectory {
        times,
        snapshots,
        steps,
        accepted: stepper.accepted,
        rejected: stepper.rejected,
        mass_drift: drift,
        max_entropy_decrease: max_decrease,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShortTimeReport {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    /// Fitted exponent of `e(t) ~ c t^order`; `None` when every error is 0.
    pub order: Option<f64>,
}

/// `e(t) = || (W(t) - W0)/t - C(W0) ||_1` for each `t`, with `W(t)` from a
/// tightly controlled integration.
pub fn short_time_check<C: CollisionOperator + ?Sized>(
    w0: &Distribution,
    op: &C,
    t_list: &[f64],
) -> Result<ShortTimeReport> {
    if t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(QkinError::InvalidParameter("short-time checkpoints must be positive".into()));
    }
    let c0 = op.apply_values(w0.values())?;
    let wt = w0.grid().uniform_weight();
    let mut errors = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let cfg = SolverConfig {
            dt: t,
            dt_min: t * 1e-8,
            dt_max: t,
            tolerance: 1e-14,
            t_max: t,
            snapshot_every: t,
            ..SolverConfig::default()
        };
        let traj = solve_homogeneous(w0, op, &cfg)?;
        let wt_end = traj.snapshots.last().unwrap();
        let e: f64 = wt_end
            .iter()
            .zip(w0.values())
            .zip(&c0)
            .map(|((a, b), c)| ((a - b) / t - c).abs())
            .sum::<f64>()
            * wt;
        errors.push(e);
    }
    let pos: Vec<(f64, f64)> = t_list
        .iter()
        .zip(&errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(t, e)| (t.ln(), e.ln()))
        .collect();
    let order = if pos.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pos.into_iter().unzip();
        Some(linear_fit(&x, &y).slope)
    } else {
        None
    };
    Ok(ShortTimeReport {
        times: t_list.to_vec(),
        errors,
        order,
    })
}
