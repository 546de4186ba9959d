//! Uehling-Uhlenbeck collision operator for fermions, bosons and classical
//! particles.
//!
//! Two quadratures are provided. On a continuum box grid the energy and
//! momentum deltas are resolved exactly by parametrizing the outgoing pair
//! as `k3,4 = P +- |q| n` with `P = (k1 + k2)/2`, `q = (k1 - k2)/2`, which
//! leaves `C(k1) = int dk2 |q|/2 int_{S^2} dn Phi B`. The distribution is
//! interpolated off-grid through its entropy variable
//! `g = ln((1 + theta W)/W)`, and the result is projected onto the
//! orthogonal complement of the collision invariants. On a lattice torus
//! `k4 = k1 + k2 - k3` is an exact node and the energy delta is smeared.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision_linear::wrap;
use crate::dispersion::{DispersionKind, DispersionModel};
use crate::error::{check_len, QkinError, Result};
use crate::grids::{first_inadmissible, smeared_delta, Distribution, GridKind, MomentumGrid, Statistics};
use crate::linalg::orthonormalize;
use crate::transport::CollisionOperator;

/// Largest magnitude of the entropy variable; `exp(690)` is still finite.
const G_CAP: f64 = 690.0;
/// Above this many nodes the pair table is not stored.
const PAIR_TABLE_LIMIT: usize = 8000;

/// Radial pair potential `V^(q)`, evaluated from `|q|^2`.
#[derive(Clone)]
pub enum PairPotential {
    Constant(f64),
    /// `A exp(-|q|^2 / (2 w^2))`
    Gaussian { amplitude: f64, width: f64 },
    Radial(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for PairPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Gaussian { amplitude, width } => {
                write!(f, "Gaussian {{ amplitude: {amplitude}, width: {width} }}")
            }
            Self::Radial(_) => write!(f, "Radial(..)"),
        }
    }
}

impl PairPotential {
    #[inline]
    pub fn eval_sq(&self, q2: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Gaussian { amplitude, width } => amplitude * (-0.5 * q2 / (width * width)).exp(),
            Self::Radial(f) => f(q2.sqrt()),
        }
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        self.eval_sq(q.iter().map(|x| x * x).sum())
    }
}

/// `|V^(k1 - k3) + theta V^(k2 - k3)|^2`; the delta constraints are left to
/// the quadrature, so `k4` does not enter.
pub fn collision_rate(
    v: &PairPotential,
    theta: f64,
    k1: &[f64],
    k2: &[f64],
    k3: &[f64],
    _k4: &[f64],
) -> f64 {
    let d13: Vec<f64> = k1.iter().zip(k3).map(|(a, b)| a - b).collect();
    let d23: Vec<f64> = k2.iter().zip(k3).map(|(a, b)| a - b).collect();
    let s = v.eval(&d13) + theta * v.eval(&d23);
    s * s
}

/// Gain and loss parts of `W3 W4 (1+tW1)(1+tW2) - W1 W2 (1+tW3)(1+tW4)`.
#[inline]
pub fn bracket(theta: f64, w1: f64, w2: f64, w3: f64, w4: f64) -> (f64, f64) {
    (
        w3 * w4 * (1.0 + theta * w1) * (1.0 + theta * w2),
        w1 * w2 * (1.0 + theta * w3) * (1.0 + theta * w4),
    )
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Product rule on `S^2`: Gauss-Legendre in `cos(theta)` times a uniform
/// azimuthal grid with twice as many points. Weights sum to `4 pi` and the
/// node set is closed under `n -> -n`.
#[derive(Clone, Debug)]
pub struct SphereDesign {
    pub n_theta: usize,
    pub n_phi: usize,
    pub directions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// One representative of every antipodal pair.
    pub half: Vec<usize>,
}

impl SphereDesign {
    /// Roughly `n_s` directions (exactly `2 round(sqrt(n_s/2))^2`).
    pub fn new(n_s: usize) -> Result<Self> {
        let n_theta = ((n_s as f64 / 2.0).sqrt().round() as usize).max(1);
        if n_s < 2 {
            return Err(QkinError::InvalidParameter(format!(
                "sphere design needs at least 2 directions, got {n_s}"
            )));
        }
        let n_phi = 2 * n_theta;
        let (ct, wt) = gauss_legendre(n_theta);
        let mut directions = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let mut half = Vec::new();
        for i in 0..n_theta {
            let st = (1.0 - ct[i] * ct[i]).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                directions.push([st * phi.cos(), st * phi.sin(), ct[i]]);
                weights.push(wt[i] * 2.0 * PI / n_phi as f64);
                let mirror_i = n_theta - 1 - i;
                if i < mirror_i || (i == mirror_i && j < n_phi / 2) {
                    half.push(i * n_phi + j);
                }
            }
        }
        Ok(Self {
            n_theta,
            n_phi,
            directions,
            weights,
            half,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub enum UuQuadrature {
    SphereReduction { design: SphereDesign },
    SmearedDelta { eta: f64 },
}

#[derive(Clone, Debug)]
pub struct UuOperator {
    grid: Arc<MomentumGrid>,
    model: DispersionModel,
    potential: PairPotential,
    stats: Statistics,
    quadrature: UuQuadrature,
    project: bool,
    omega: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

/// Gain and loss integrals, the raw difference and the projected collision
/// term.
#[derive(Clone, Debug)]
pub struct UuTerms {
    pub gain: Vec<f64>,
    pub loss: Vec<f64>,
    pub raw: Vec<f64>,
    pub collision: Vec<f64>,
}

impl UuOperator {
    /// Sphere-reduced operator on a three-dimensional continuum box.
    pub fn continuum(
        grid: Arc<MomentumGrid>,
        model: &DispersionModel,
        potential: PairPotential,
        stats: Statistics,
        n_s: usize,
    ) -> Result<Self> {
        if model.kind() != DispersionKind::ContinuumQuadratic {
            return Err(QkinError::GridMismatch(
                "sphere reduction needs the quadratic continuum dispersion".into(),
            ));
        }
        if grid.kind() != GridKind::BoxUniform || grid.dim() != 3 || model.dim() != 3 {
            return Err(QkinError::GridMismatch(
                "sphere reduction needs a three-dimensional box grid".into(),
            ));
        }
        if grid.n() < 3 {
            return Err(QkinError::GridMismatch("interpolation needs at least 3 nodes per axis".into()));
        }
        let design = SphereDesign::new(n_s)?;
        Self::assemble(grid, model, potential, stats, UuQuadrature::SphereReduction { design }, true)
    }

    /// Smeared-delta operator on a lattice torus with exact momentum
    /// conservation modulo `2 pi`.
    pub fn lattice(
        grid: Arc<MomentumGrid>,
        model: &DispersionModel,
        potential: PairPotential,
        stats: Statistics,
        eta: f64,
    ) -> Result<Self> {
        if !grid.is_periodic() || !model.is_periodic() || grid.dim() != model.dim() {
            return Err(QkinError::GridMismatch(
                "smeared-delta operator needs a torus grid and a periodic dispersion".into(),
            ));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(QkinError::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        Self::assemble(grid, model, potential, stats, UuQuadrature::SmearedDelta { eta }, false)
    }

    fn assemble(
        grid: Arc<MomentumGrid>,
        model: &DispersionModel,
        potential: PairPotential,
        stats: Statistics,
        quadrature: UuQuadrature,
        project: bool,
    ) -> Result<Self> {
        let omega = grid.omegas(model)?;
        let n = grid.len();
        let wt = grid.uniform_weight().sqrt();
        let mut raw = vec![vec![wt; n]];
        for a in 0..grid.dim() {
            raw.push((0..n).map(|i| wt * grid.moment_coordinate(i, a)).collect());
        }
        raw.push(omega.iter().map(|o| wt * o).collect());
        let basis = orthonormalize(&orthonormalize(&raw));
        Ok(Self {
            grid,
            model: model.clone(),
            potential,
            stats,
            quadrature,
            project,
            omega,
            basis,
        })
    }

    /// Turns the conservative projection on or off (continuum only).
    pub fn with_projection(mut self, on: bool) -> Self {
        self.project = on && matches!(self.quadrature, UuQuadrature::SphereReduction { .. });
        self
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn model(&self) -> &DispersionModel {
        &self.model
    }

    pub fn potential(&self) -> &PairPotential {
        &self.potential
    }

    pub fn quadrature(&self) -> &UuQuadrature {
        &self.quadrature
    }

    pub fn statistics_kind(&self) -> Statistics {
        self.stats
    }

    pub fn apply(&self, w: &Distribution) -> Result<Vec<f64>> {
        self.check_distribution(w)?;
        Ok(self.terms_values(w.values())?.collision)
    }

    pub fn terms(&self, w: &Distribution) -> Result<UuTerms> {
        self.check_distribution(w)?;
        self.terms_values(w.values())
    }

    fn check_distribution(&self, w: &Distribution) -> Result<()> {
        if !w.grid().compatible(&self.grid) {
            return Err(QkinError::GridMismatch(
                "distribution and quadrature grids differ".into(),
            ));
        }
        if w.statistics() != self.stats {
            return Err(QkinError::GridMismatch(format!(
                "distribution has {:?} statistics, operator {:?}",
                w.statistics(),
                self.stats
            )));
        }
        Ok(())
    }

    pub fn terms_values(&self, w: &[f64]) -> Result<UuTerms> {
        check_len(self.grid.len(), w.len())?;
        if let Some((i, v)) = first_inadmissible(self.stats, w) {
            return Err(QkinError::Invariant(format!(
                "value {v} at node {i} is not admissible for {:?} statistics",
                self.stats
            )));
        }
        let (gain, loss) = match &self.quadrature {
            UuQuadrature::SphereReduction { design } => self.sphere_terms(w, design),
            UuQuadrature::SmearedDelta { eta } => self.lattice_terms(w, *eta),
        };
        let raw: Vec<f64> = gain.iter().zip(&loss).map(|(g, l)| g - l).collect();
        let collision = if self.project {
            self.project_out(&raw)
        } else {
            raw.clone()
        };
        Ok(UuTerms {
            gain,
            loss,
            raw,
            collision,
        })
    }

    /// Removes the component of `c` in the span of the collision invariants.
    fn project_out(&self, c: &[f64]) -> Vec<f64> {
        let wt = self.grid.uniform_weight().sqrt();
        let mut y: Vec<f64> = c.iter().map(|x| wt * x).collect();
        for _ in 0..2 {
            for e in &self.basis {
                let p: f64 = e.iter().zip(&y).map(|(a, b)| a * b).sum();
                y.iter_mut().zip(e).for_each(|(v, b)| *v -= p * b);
            }
        }
        y.iter().map(|v| v / wt).collect()
    }

    /// Sphere-reduced integrand of the pair `(k_i, k_j)` summed over the
    /// scattering directions, without the `k_j` weight.
    fn sphere_pair(&self, field: &GField, dirs: &[([f64; 3], f64)], w: &[f64], i: usize, j: usize) -> (f64, f64) {
        let theta = self.stats.theta();
        let k1 = self.grid.node(i);
        let k2 = self.grid.node(j);
        let p = [0.5 * (k1[0] + k2[0]), 0.5 * (k1[1] + k2[1]), 0.5 * (k1[2] + k2[2])];
        let q = [0.5 * (k1[0] - k2[0]), 0.5 * (k1[1] - k2[1]), 0.5 * (k1[2] - k2[2])];
        let q2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
        if q2 == 0.0 {
            return (0.0, 0.0);
        }
        let qn = q2.sqrt();
        let (w1, w2) = (w[i], w[j]);
        // For a Gaussian, V(q_a) V(q_b) does not depend on the direction.
        let product = match self.potential {
            PairPotential::Gaussian { amplitude, width } => Some(amplitude * amplitude * (-2.0 * q2 / (width * width)).exp()),
            _ => None,
        };
        let (mut gain, mut loss) = (0.0, 0.0);
        for (n_dir, wn) in dirs {
            let c = (q[0] * n_dir[0] + q[1] * n_dir[1] + q[2] * n_dir[2]) / qn;
            let va = self.potential.eval_sq(2.0 * q2 * (1.0 - c));
            let vb = match product {
                Some(p) if va.abs() > 1e-150 => p / va,
                _ => self.potential.eval_sq(2.0 * q2 * (1.0 + c)),
            };
            let phi = (va + theta * vb).powi(2) + (vb + theta * va).powi(2);
            if phi == 0.0 {
                continue;
            }
            let k3 = [p[0] + qn * n_dir[0], p[1] + qn * n_dir[1], p[2] + qn * n_dir[2]];
            let k4 = [p[0] - qn * n_dir[0], p[1] - qn * n_dir[1], p[2] - qn * n_dir[2]];
            let (w3, w4) = (field.eval(&k3), field.eval(&k4));
            let (g, l) = bracket(theta, w1, w2, w3, w4);
            gain += wn * phi * g;
            loss += wn * phi * l;
        }
        let jac = 0.5 * qn;
        (jac * gain, jac * loss)
    }

    /// Gain and loss at the single node `i`, without the projection.
    pub fn terms_at(&self, w: &[f64], i: usize) -> Result<(f64, f64)> {
        check_len(self.grid.len(), w.len())?;
        if i >= w.len() {
            return Err(QkinError::InvalidParameter(format!("node {i} out of range")));
        }
        if let Some((j, v)) = first_inadmissible(self.stats, w) {
            return Err(QkinError::Invariant(format!(
                "value {v} at node {j} is not admissible for {:?} statistics",
                self.stats
            )));
        }
        let wt = self.grid.uniform_weight();
        Ok(match &self.quadrature {
            UuQuadrature::SphereReduction { design } => {
                let field = GField::new(&self.grid, w, self.stats);
                let dirs = half_directions(design);
                let pairs: Vec<(f64, f64)> = (0..w.len())
                    .into_par_iter()
                    .map(|j| if j == i { (0.0, 0.0) } else { self.sphere_pair(&field, &dirs, w, i, j) })
                    .collect();
                let (g, l) = pairs.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
                (wt * g, wt * l)
            }
            UuQuadrature::SmearedDelta { eta } => self.lattice_row(&self.lattice_tables(), w, *eta, i),
        })
    }

    fn sphere_terms(&self, w: &[f64], design: &SphereDesign) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let field = GField::new(&self.grid, w, self.stats);
        let dirs = half_directions(design);
        let pair = |i: usize, j: usize| self.sphere_pair(&field, &dirs, w, i, j);
        let wt = self.grid.uniform_weight();
        let mut gain = vec![0.0; n];
        let mut loss = vec![0.0; n];
        if n <= PAIR_TABLE_LIMIT {
            let rows: Vec<Vec<(f64, f64)>> = (0..n)
                .into_par_iter()
                .map(|i| ((i + 1)..n).map(|j| pair(i, j)).collect())
                .collect();
            for (i, row) in rows.iter().enumerate() {
                for (off, (g, l)) in row.iter().enumerate() {
                    let j = i + 1 + off;
                    gain[i] += wt * g;
                    loss[i] += wt * l;
                    gain[j] += wt * g;
                    loss[j] += wt * l;
                }
            }
        } else {
            let rows: Vec<(f64, f64)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n).filter(|&j| j != i).fold((0.0, 0.0), |(ga, la), j| {
                        let (g, l) = pair(i, j);
                        (ga + wt * g, la + wt * l)
                    })
                })
                .collect();
            for (i, (g, l)) in rows.into_iter().enumerate() {
                gain[i] = g;
                loss[i] = l;
            }
        }
        (gain, loss)
    }

    fn lattice_terms(&self, w: &[f64], eta: f64) -> (Vec<f64>, Vec<f64>) {
        let tables = self.lattice_tables();
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| self.lattice_row(&tables, w, eta, i))
            .unzip()
    }

    /// Multi-indices of the nodes and `V^` at every lattice difference
    /// `k_a - k_b`, indexed by the flat index of `(a - b) mod n`.
    fn lattice_tables(&self) -> LatticeTables {
        let n = self.grid.len();
        let d = self.grid.dim();
        let m = self.grid.n();
        let idx: Vec<[usize; 3]> = (0..n).map(|i| self.grid.multi_index(i)).collect();
        let step = 2.0 * std::f64::consts::PI / m as f64;
        let potential = idx
            .iter()
            .map(|c| {
                let q2: f64 = c[..d].iter().map(|&x| wrap(step * x as f64).powi(2)).sum();
                self.potential.eval_sq(q2)
            })
            .collect();
        LatticeTables { idx, potential }
    }

    fn lattice_row(&self, tables: &LatticeTables, w: &[f64], eta: f64, i: usize) -> (f64, f64) {
        let n = self.grid.len();
        let d = self.grid.dim();
        let m = self.grid.n();
        let theta = self.stats.theta();
        let wt = self.grid.uniform_weight();
        let flat = |c: &[usize; 3]| c[..d].iter().fold(0, |acc, &x| acc * m + x);
        let diff = |a: &[usize; 3], b: &[usize; 3]| {
            let mut c = [0usize; 3];
            for x in 0..d {
                c[x] = (a[x] + m - b[x]) % m;
            }
            flat(&c)
        };
        let ii = &tables.idx[i];
        let (mut gain, mut loss) = (0.0, 0.0);
        let mut k4 = [0usize; 3];
        for j in 0..n {
            let ij = &tables.idx[j];
            for l in 0..n {
                let il = &tables.idx[l];
                for x in 0..d {
                    k4[x] = (ii[x] + ij[x] + m - il[x]) % m;
                }
                let f = flat(&k4);
                let de = self.omega[i] + self.omega[j] - self.omega[l] - self.omega[f];
                let delta = smeared_delta(de, eta);
                if delta == 0.0 {
                    continue;
                }
                let s = tables.potential[diff(ii, il)] + theta * tables.potential[diff(ij, il)];
                let rate = s * s * delta;
                if rate == 0.0 {
                    continue;
                }
                let (g, lo) = bracket(theta, w[i], w[j], w[l], w[f]);
                gain += rate * g;
                loss += rate * lo;
            }
        }
        (wt * wt * gain, wt * wt * loss)
    }

    /// `int sigma'(W) C(W) dk`.
    pub fn entropy_production(&self, w: &Distribution) -> Result<f64> {
        let c = self.apply(w)?;
        let wt = self.grid.uniform_weight();
        Ok(wt
            * w.values()
                .iter()
                .zip(&c)
                .map(|(x, ci)| entropy_derivative(*x, self.stats) * ci)
                .sum::<f64>())
    }
}

impl CollisionOperator for UuOperator {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn statistics(&self) -> Statistics {
        self.stats
    }

    fn apply_values(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.terms_values(w)?.collision)
    }
}

/// Entropy variable `ln((1 + theta W)/W)`, `-ln W` for `theta = 0`, capped
/// at `+-690`.
#[inline]
pub fn entropy_variable(w: f64, stats: Statistics) -> f64 {
    let g = match stats {
        Statistics::Boltzmann => -w.ln(),
        Statistics::Fermion => (1.0 - w).ln() - w.ln(),
        Statistics::Boson => w.ln_1p() - w.ln(),
    };
    if g.is_nan() {
        0.0
    } else {
        g.clamp(-G_CAP, G_CAP)
    }
}

#[inline]
fn occupation_of(g: f64, stats: Statistics) -> f64 {
    match stats {
        Statistics::Boltzmann => (-g).exp(),
        Statistics::Fermion => 1.0 / (g.exp() + 1.0),
        Statistics::Boson => 1.0 / g.exp_m1(),
    }
}

/// `sigma'(W)`.
pub fn entropy_derivative(w: f64, stats: Statistics) -> f64 {
    match stats {
        Statistics::Boltzmann => entropy_variable(w, stats) - 1.0,
        _ => entropy_variable(w, stats),
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Pointwise entropy density.
#[inline]
pub fn entropy_density(w: f64, stats: Statistics) -> f64 {
    match stats {
        Statistics::Boltzmann => -xlogx(w),
        Statistics::Fermion => -xlogx(1.0 - w) - xlogx(w),
        Statistics::Boson => xlogx(1.0 + w) - xlogx(w),
    }
}

/// `sum_i weight * s(W_i)` without validation.
pub fn entropy_of(weight: f64, values: &[f64], stats: Statistics) -> f64 {
    weight * values.iter().map(|&w| entropy_density(w, stats)).sum::<f64>()
}

/// `sigma(W) = int [theta^{-1}(1 + theta W) ln(1 + theta W) - W ln W] dk`.
pub fn entropy(w: &Distribution) -> Result<f64> {
    if let Some((i, v)) = first_inadmissible(w.statistics(), w.values()) {
        return Err(QkinError::Invariant(format!(
            "value {v} at node {i} is not admissible for {:?} statistics",
            w.statistics()
        )));
    }
    Ok(entropy_of(w.grid().uniform_weight(), w.values(), w.statistics()))
}

fn half_directions(design: &SphereDesign) -> Vec<([f64; 3], f64)> {
    design
        .half
        .iter()
        .map(|&i| (design.directions[i], design.weights[i]))
        .collect()
}

/// Entropy-variable field on a box grid, interpolated trilinearly with a
/// second-difference correction so that quadratic `g` is reproduced
/// exactly, including outside the box.
struct GField {
    n: usize,
    origin: f64,
    inv_h: f64,
    /// `[g, D2_x g, D2_y g, D2_z g]` per node.
    data: Vec<[f64; 4]>,
    lo: f64,
    hi: f64,
    stats: Statistics,
}

impl GField {
    fn new(grid: &MomentumGrid, w: &[f64], stats: Statistics) -> Self {
        let n = grid.n();
        let g: Vec<f64> = w.iter().map(|&x| entropy_variable(x, stats)).collect();
        let at = |i: usize, j: usize, k: usize| g[(i * n + j) * n + k];
        let second = |f: &dyn Fn(usize) -> f64, i: usize| -> f64 {
            let c = i.clamp(1, n - 2);
            f(c + 1) - 2.0 * f(c) + f(c - 1)
        };
        let mut data = Vec::with_capacity(g.len());
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    data.push([
                        at(i, j, k),
                        second(&|x| at(x, j, k), i),
                        second(&|y| at(i, y, k), j),
                        second(&|z| at(i, j, z), k),
                    ]);
                }
            }
        }
        let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = (gmin - 1.0).max(-G_CAP);
        if stats == Statistics::Boson {
            lo = lo.max(1e-2 * gmin);
        }
        let hi = (gmax + 1.0).min(G_CAP);
        Self {
            n,
            origin: grid.axis()[0],
            inv_h: 1.0 / grid.spacing(),
            data,
            lo,
            hi,
            stats,
        }
    }

    /// Interpolated occupation at an arbitrary point.
    #[inline]
    fn eval(&self, k: &[f64; 3]) -> f64 {
        let mut cell = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let u = (k[a] - self.origin) * self.inv_h;
            let c = (u.floor().max(0.0) as usize).min(self.n - 2);
            cell[a] = c;
            t[a] = u - c as f64;
        }
        let n = self.n;
        let base = (cell[0] * n + cell[1]) * n + cell[2];
        let wx = [1.0 - t[0], t[0]];
        let wy = [1.0 - t[1], t[1]];
        let (wz0, wz1) = (1.0 - t[2], t[2]);
        let mut acc = [0.0; 4];
        for (dx, wxv) in wx.iter().enumerate() {
            for (dy, wyv) in wy.iter().enumerate() {
                let row = base + dx * n * n + dy * n;
                let ab: &[[f64; 4]; 2] = self.data[row..row + 2].try_into().unwrap();
                let wxy = wxv * wyv;
                for c in 0..4 {
                    acc[c] += wxy * (wz0 * ab[0][c] + wz1 * ab[1][c]);
                }
            }
        }
        let g = acc[0]
            - 0.5 * (t[0] * (1.0 - t[0]) * acc[1] + t[1] * (1.0 - t[1]) * acc[2] + t[2] * (1.0 - t[2]) * acc[3]);
        occupation_of(g.clamp(self.lo, self.hi), self.stats)
    }
}

struct LatticeTables {
    idx: Vec<[usize; 3]>,
    potential: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

const MC_CHUNKS: u64 = 64;

/// Monte Carlo estimate of the continuum collision integral at `k1` for a
/// closed-form occupation `w`, sampling `k2` in `[-K, K]^3` from a
/// uniform/Gaussian mixture and the scattering direction uniformly on `S^2`.
/// The result depends only on `seed`, not on the number of workers.
#[allow(clippy::too_many_arguments)]
pub fn mc_oracle(
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
    potential: &PairPotential,
    stats: Statistics,
    k1: &[f64],
    half_width: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if k1.len() != 3 {
        return Err(QkinError::InvalidParameter("mc_oracle works in three dimensions".into()));
    }
    if !(half_width > 0.0) {
        return Err(QkinError::InvalidParameter("box half-width must be positive".into()));
    }
    if n_samples < 2 {
        return Err(QkinError::InvalidParameter("mc_oracle needs at least 2 samples".into()));
    }
    let theta = stats.theta();
    let kk = half_width;
    let sigma = kk / 4.0;
    let vol = (2.0 * kk).powi(3);
    let gauss_norm = (2.0 * PI * sigma * sigma).powf(1.5);
    let w1 = w(k1);
    let base = n_samples / MC_CHUNKS as usize;
    let extra = n_samples % MC_CHUNKS as usize;
    let sums: Vec<(f64, f64)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = base + usize::from((c as usize) < extra);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let k2: [f64; 3] = if rng.random::<f64>() < 0.1 {
                    std::array::from_fn(|_| kk * (2.0 * rng.random::<f64>() - 1.0))
                } else {
                    std::array::from_fn(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                };
                let z = 2.0 * rng.random::<f64>() - 1.0;
                let phi = 2.0 * PI * rng.random::<f64>();
                let r = (1.0 - z * z).max(0.0).sqrt();
                let n = [r * phi.cos(), r * phi.sin(), z];
                let value = if k2.iter().all(|x| x.abs() <= kk) {
                    let r2: f64 = k2.iter().map(|x| x * x).sum();
                    let density =
                        0.1 / vol + 0.9 * (-0.5 * r2 / (sigma * sigma)).exp() / gauss_norm;
                    let q: [f64; 3] = std::array::from_fn(|a| 0.5 * (k1[a] - k2[a]));
                    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let k3: [f64; 3] = std::array::from_fn(|a| 0.5 * (k1[a] + k2[a]) + qn * n[a]);
                    let k4: [f64; 3] = std::array::from_fn(|a| k1[a] + k2[a] - k3[a]);
                    let rate = collision_rate(potential, theta, k1, &k2, &k3, &k4);
                    let (g, l) = bracket(theta, w1, w(&k2), w(&k3), w(&k4));
                    0.5 * qn * 4.0 * PI * rate * (g - l) / density
                } else {
                    0.0
                };
                s += value;
                s2 += value * value;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let nf = n_samples as f64;
    let mean = s / nf;
    let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        stderr: (var / nf).sqrt(),
        samples: n_samples,
    })
}
