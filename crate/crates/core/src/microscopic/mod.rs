//! Disorder-averaged single-particle Schrodinger evolution on the lattice
//! torus, `i d/dt psi = -1/2 Delta psi + sqrt(eps) V psi`, compared with the
//! linear kinetic equation at kinetic times `t = tau / eps`.

mod fft;
mod wigner;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision_linear::{CollisionMatrix, PotentialSpectrum};
use crate::dispersion::DispersionModel;
use crate::error::{QkinError, Result};
use crate::grids::{auto_eta, Distribution, GridKind, MomentumGrid, Statistics};
use crate::stats::linear_fit;
use crate::transport::{solve_homogeneous, SolverConfig};

pub use fft::LatticeFft;
pub use wigner::{
    self_averaging_variance, wigner_transform, wigner_transform_many, windowed_occupation,
    ObservableWindow, SelfAveragingReport, Taper, WignerConfig,
};

const PHASE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Default cost budget in elementary FFT operations.
pub const DEFAULT_BUDGET: f64 = 2e11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderLaw {
    /// Standard normal site values.
    GaussianUnit,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    UniformUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderEnsemble {
    pub dim: usize,
    /// Lattice side `L`; the torus has `L^dim` sites.
    pub side: usize,
    pub epsilon: f64,
    pub law: DisorderLaw,
    pub seed: u64,
    pub n_real: usize,
}

impl DisorderEnsemble {
    pub fn new(
        dim: usize,
        side: usize,
        epsilon: f64,
        law: DisorderLaw,
        seed: u64,
        n_real: usize,
    ) -> Result<Self> {
        let e = Self {
            dim,
            side,
            epsilon,
            law,
            seed,
            n_real,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(QkinError::InvalidParameter(format!(
                "lattice dimension must be 1, 2 or 3, got {}",
                self.dim
            )));
        }
        if self.side < 2 || !self.side.is_multiple_of(2) {
            return Err(QkinError::InvalidParameter(format!(
                "lattice side must be even and >= 2, got {}",
                self.side
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(QkinError::InvalidParameter(format!(
                "coupling must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.n_real == 0 {
            return Err(QkinError::InvalidParameter("need at least one realization".into()));
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// On-site potential of realization `r`, reproducible from `(seed, r)`.
    pub fn sample_potential(&self, r: usize) -> Result<Vec<f64>> {
        if r >= self.n_real {
            return Err(QkinError::InvalidParameter(format!(
                "realization {r} out of range (n_real = {})",
                self.n_real
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r as u64);
        let n = self.sites();
        Ok(match self.law {
            DisorderLaw::GaussianUnit => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            DisorderLaw::UniformUnit => {
                let a = 3f64.sqrt();
                (0..n).map(|_| a * (2.0 * rng.random::<f64>() - 1.0)).collect()
            }
        })
    }

    fn phase_seed(&self) -> u64 {
        self.seed ^ PHASE_SALT
    }

    /// The Fourier grid matching the lattice.
    pub fn momentum_grid(&self) -> Result<Arc<MomentumGrid>> {
        Ok(Arc::new(MomentumGrid::torus(self.dim, self.side)?))
    }
}

/// Complex amplitudes on the `L^d` torus, site index with the last axis
/// fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Wavefunction {
    pub dim: usize,
    pub side: usize,
    pub amplitudes: Vec<Complex64>,
}

impl Wavefunction {
    pub fn new(dim: usize, side: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        crate::error::check_len(side.pow(dim as u32), amplitudes.len())?;
        Ok(Self {
            dim,
            side,
            amplitudes,
        })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `|psi^(k)|^2` in the node order of the matching torus grid, with
    /// `psi^ = N^{-1/2} sum_x e^{-ikx} psi(x)`.
    pub fn momentum_distribution(&self, fft: &mut LatticeFft) -> Vec<f64> {
        let mut buf = self.amplitudes.clone();
        fft.forward(&mut buf);
        let n = buf.len() as f64;
        let mut out = vec![0.0; buf.len()];
        for (m, a) in buf.iter().enumerate() {
            out[fft.grid_index_of_fft(m)] = a.norm_sqr() / n;
        }
        out
    }

    /// `<psi, H psi>` with `H = -1/2 Delta + sqrt(eps) V`.
    pub fn energy(&self, potential: &[f64], epsilon: f64, fft: &mut LatticeFft) -> f64 {
        let mut buf = self.amplitudes.clone();
        fft.forward(&mut buf);
        let n = buf.len() as f64;
        let kinetic: f64 = buf
            .iter()
            .enumerate()
            .map(|(m, a)| fft.omega_fft(m) * a.norm_sqr())
            .sum::<f64>()
            / n;
        let pot: f64 = self
            .amplitudes
            .iter()
            .zip(potential)
            .map(|(a, v)| v * a.norm_sqr())
            .sum();
        kinetic + epsilon.sqrt() * pot
    }
}

/// `psi^(k) = sqrt(W0(k) / sum W0) e^{i phi_k}` with i.i.d. uniform phases.
pub fn random_phase_state(w0: &Distribution, seed: u64) -> Result<Wavefunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_phase_with(w0, &mut rng)
}

fn random_phase_with(w0: &Distribution, rng: &mut ChaCha8Rng) -> Result<Wavefunction> {
    let grid = w0.grid();
    if grid.kind() != GridKind::TorusUniform {
        return Err(QkinError::GridMismatch("random-phase states live on the torus grid".into()));
    }
    let total: f64 = w0.values().iter().sum();
    if !(total > 0.0) || w0.values().iter().any(|&w| w < 0.0) {
        return Err(QkinError::InvalidParameter(
            "random-phase state needs W0 >= 0 with positive total".into(),
        ));
    }
    let mut fft = LatticeFft::new(grid.dim(), grid.n());
    let n = grid.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, &w) in w0.values().iter().enumerate() {
        let phi = 2.0 * PI * rng.random::<f64>();
        buf[fft.fft_index_of_grid(i)] = Complex64::from_polar((w / total).sqrt(), phi);
    }
    fft.inverse(&mut buf);
    let s = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|a| *a *= s);
    Wavefunction::new(grid.dim(), grid.n(), buf)
}

/// Default step: `0.1 / max(d, sqrt(eps) max|V|)`.
pub fn default_dt(dim: usize, epsilon: f64, potential: &[f64]) -> f64 {
    let vmax = potential.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    0.1 / (dim as f64).max(epsilon.sqrt() * vmax)
}

/// Strang split-step propagator for a fixed potential.
pub struct Evolver {
    fft: LatticeFft,
    half_phase: Vec<Complex64>,
    kinetic_phase: Vec<Complex64>,
    dt: f64,
}

impl Evolver {
    pub fn new(dim: usize, side: usize, potential: &[f64], epsilon: f64, dt: f64) -> Result<Self> {
        let fft = LatticeFft::new(dim, side);
        crate::error::check_len(fft.len(), potential.len())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(QkinError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let mut e = Self {
            fft,
            half_phase: Vec::new(),
            kinetic_phase: Vec::new(),
            dt: 0.0,
        };
        e.set_dt(dt, potential, epsilon);
        Ok(e)
    }

    fn set_dt(&mut self, dt: f64, potential: &[f64], epsilon: f64) {
        if dt == self.dt {
            return;
        }
        let se = epsilon.sqrt();
        let n = self.fft.len() as f64;
        self.half_phase = potential
            .iter()
            .map(|v| Complex64::from_polar(1.0, -0.5 * se * v * dt))
            .collect();
        self.kinetic_phase = (0..self.fft.len())
            .map(|m| Complex64::from_polar(1.0 / n, -self.fft.omega_fft(m) * dt))
            .collect();
        self.dt = dt;
    }

    fn step(&mut self, psi: &mut [Complex64]) {
        for (a, p) in psi.iter_mut().zip(&self.half_phase) {
            *a *= p;
        }
        self.fft.forward(psi);
        for (a, p) in psi.iter_mut().zip(&self.kinetic_phase) {
            *a *= p;
        }
        self.fft.inverse(psi);
        for (a, p) in psi.iter_mut().zip(&self.half_phase) {
            *a *= p;
        }
    }
}

/// Evolves `psi0` to time `t` with steps no larger than `dt`.
pub fn evolve(psi0: &Wavefunction, potential: &[f64], epsilon: f64, t: f64, dt: f64) -> Result<Wavefunction> {
    let mut out = psi0.clone();
    let mut ev = Evolver::new(psi0.dim, psi0.side, potential, epsilon, dt)?;
    advance(&mut ev, &mut out, potential, epsilon, t, dt)?;
    Ok(out)
}

fn advance(
    ev: &mut Evolver,
    psi: &mut Wavefunction,
    potential: &[f64],
    epsilon: f64,
    t: f64,
    dt_max: f64,
) -> Result<()> {
    if !(t >= 0.0) {
        return Err(QkinError::InvalidParameter(format!("evolution time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(());
    }
    let n = (t / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    ev.set_dt(t / n as f64, potential, epsilon);
    let n0 = psi.norm();
    for _ in 0..n {
        ev.step(&mut psi.amplitudes);
    }
    let drift = (psi.norm() - n0).abs();
    if drift > 1e-9 * n0.max(1.0) {
        return Err(QkinError::Numerical(format!("norm drift {drift:.3e} during evolution")));
    }
    Ok(())
}

/// Ensemble mean and per-node standard error of `|psi^(k, tau/eps)|^2 sum W0`.
#[derive(Clone, Debug)]
pub struct AveragedDistribution {
    pub tau: f64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_real: usize,
    /// Per-realization distributions, in realization order.
    pub samples: Vec<Vec<f64>>,
}

/// Cost estimate in FFT element operations for evolving one ensemble.
pub fn evolution_cost(ens: &DisorderEnsemble, tau_max: f64, dt: f64) -> f64 {
    if ens.epsilon == 0.0 || tau_max == 0.0 {
        return 0.0;
    }
    let n = ens.sites() as f64;
    let steps = (tau_max / ens.epsilon / dt).ceil();
    2.0 * ens.n_real as f64 * steps * n * n.log2().max(1.0)
}

/// Per-realization momentum distributions at every kinetic time in `taus`,
/// averaged over disorder and phases.
pub fn averaged_momentum_distribution(
    ens: &DisorderEnsemble,
    w0: &Distribution,
    taus: &[f64],
    budget: f64,
) -> Result<Vec<AveragedDistribution>> {
    ens.validate()?;
    let grid = w0.grid();
    if grid.kind() != GridKind::TorusUniform || grid.dim() != ens.dim || grid.n() != ens.side {
        return Err(QkinError::GridMismatch(
            "W0 must live on the torus grid of the lattice".into(),
        ));
    }
    if taus.iter().any(|t| !(*t >= 0.0)) || taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(QkinError::InvalidParameter(
            "kinetic times must be non-negative and sorted".into(),
        ));
    }
    let tau_max = taus.last().copied().unwrap_or(0.0);
    let estimate = evolution_cost(ens, tau_max, 0.1 / ens.dim as f64);
    if estimate > budget {
        return Err(QkinError::BudgetExceeded { estimate, budget });
    }
    let total: f64 = w0.values().iter().sum();
    let mut per_real: Vec<Vec<Vec<f64>>> = (0..ens.n_real)
        .into_par_iter()
        .map(|r| realization_distributions(ens, w0, taus, r, total))
        .collect::<Result<_>>()?;
    let n = grid.len();
    let nr = ens.n_real as f64;
    Ok(taus
        .iter()
        .enumerate()
        .map(|(c, &tau)| {
            let mut mean = vec![0.0; n];
            for run in &per_real {
                for (m, x) in mean.iter_mut().zip(&run[c]) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nr);
            let mut var = vec![0.0; n];
            for run in &per_real {
                for ((v, x), m) in var.iter_mut().zip(&run[c]).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            let stderr = if ens.n_real > 1 {
                var.iter().map(|v| (v / (nr - 1.0) / nr).sqrt()).collect()
            } else {
                vec![f64::INFINITY; n]
            };
            AveragedDistribution {
                tau,
                mean,
                stderr,
                n_real: ens.n_real,
                samples: per_real.iter_mut().map(|run| std::mem::take(&mut run[c])).collect(),
            }
        })
        .collect())
}

fn realization_distributions(
    ens: &DisorderEnsemble,
    w0: &Distribution,
    taus: &[f64],
    r: usize,
    total: f64,
) -> Result<Vec<Vec<f64>>> {
    let (potential, mut psi) = realization_state(ens, w0, r)?;
    let dt = default_dt(ens.dim, ens.epsilon, &potential);
    let mut ev = Evolver::new(ens.dim, ens.side, &potential, ens.epsilon, dt)?;
    let mut out = Vec::with_capacity(taus.len());
    let mut t_prev = 0.0;
    for &tau in taus {
        let t = if ens.epsilon > 0.0 { tau / ens.epsilon } else { 0.0 };
        if tau == 0.0 {
            out.push(w0.values().to_vec());
            continue;
        }
        advance(&mut ev, &mut psi, &potential, ens.epsilon, t - t_prev, dt)?;
        t_prev = t;
        let mut p = psi.momentum_distribution(&mut ev.fft);
        p.iter_mut().for_each(|x| *x *= total);
        out.push(p);
    }
    Ok(out)
}

/// Disorder field and random-phase initial state of realization `r`.
pub(crate) fn realization_state(
    ens: &DisorderEnsemble,
    w0: &Distribution,
    r: usize,
) -> Result<(Vec<f64>, Wavefunction)> {
    let potential = ens.sample_potential(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ens.phase_seed());
    rng.set_stream(r as u64);
    let psi = random_phase_with(w0, &mut rng)?;
    Ok((potential, psi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticConfig {
    pub epsilons: Vec<f64>,
    pub taus: Vec<f64>,
    /// Side of the momentum blocks over which distributions are averaged
    /// before the L1 distance is taken; 1 compares node by node.
    pub block: usize,
    /// Smearing width of the kinetic reference; `None` picks the automatic
    /// width at the mean energy of `W0`.
    pub eta: Option<f64>,
    pub budget: f64,
    pub solver_tolerance: f64,
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.5, 0.25, 0.125],
            taus: vec![0.5, 1.0],
            block: 4,
            eta: None,
            budget: DEFAULT_BUDGET,
            solver_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KineticComparisonReport {
    pub epsilons: Vec<f64>,
    pub taus: Vec<f64>,
    pub block: usize,
    pub eta: f64,
    pub n_real: usize,
    /// `distances[e][t]` for `epsilons[e]`, `taus[t]`.
    pub distances: Vec<Vec<f64>>,
    pub statistical_errors: Vec<Vec<f64>>,
    pub inconclusive: Vec<Vec<bool>>,
    /// Strict decrease along the epsilon ladder, per tau.
    pub decreasing: Vec<bool>,
    /// Fitted exponent of `distance ~ eps^rate` per tau, for information.
    pub rates: Vec<Option<f64>>,
}

impl KineticComparisonReport {
    pub fn passed(&self) -> bool {
        self.decreasing.iter().all(|&d| d)
            && self.inconclusive.iter().flatten().all(|&f| !f)
    }
}

/// Kinetic reference `W(tau)` of the linear collision equation with
/// `thetahat = 1` on the lattice Fourier grid.
pub fn kinetic_reference(w0: &Distribution, taus: &[f64], eta: f64, tolerance: f64) -> Result<Vec<Vec<f64>>> {
    let grid = w0.grid().clone();
    let model = DispersionModel::lattice(grid.dim())?;
    let m = CollisionMatrix::build(grid, &model, PotentialSpectrum::Constant(1.0), eta)?;
    taus.iter()
        .map(|&tau| {
            if tau == 0.0 {
                return Ok(w0.values().to_vec());
            }
            let cfg = SolverConfig {
                dt: 0.01,
                t_max: tau,
                snapshot_every: tau,
                tolerance,
                ..SolverConfig::default()
            };
            let traj = solve_homogeneous(w0, &m, &cfg)?;
            Ok(traj.snapshots.last().cloned().unwrap_or_default())
        })
        .collect()
}

/// Automatic kinetic smearing: `auto_eta` at the mean energy of `W0`.
pub fn reference_eta(w0: &Distribution) -> Result<f64> {
    let model = DispersionModel::lattice(w0.grid().dim())?;
    let mo = w0.moments(&model)?;
    if !(mo.mass > 0.0) {
        return Err(QkinError::InvalidParameter("W0 has no mass".into()));
    }
    auto_eta(w0.grid(), &model, mo.energy / mo.mass)
}

/// Block-averaged L1 distance and its noise level
/// `sqrt(2/pi) sum_B w_B se_B`, with `se_B` the standard error of the block
/// mean across realizations.
pub fn block_distance(
    grid: &MomentumGrid,
    micro: &AveragedDistribution,
    reference: &[f64],
    block: usize,
) -> Result<(f64, f64)> {
    let n = grid.n();
    if block == 0 || !n.is_multiple_of(block) {
        return Err(QkinError::InvalidParameter(format!(
            "block size {block} must divide the lattice side {n}"
        )));
    }
    let d = grid.dim();
    let nb = n / block;
    let blocks = nb.pow(d as u32);
    let block_of: Vec<usize> = (0..grid.len())
        .map(|i| {
            let idx = grid.multi_index(i);
            idx[..d].iter().fold(0, |acc, &j| acc * nb + j / block)
        })
        .collect();
    let coarse = |v: &[f64]| {
        let mut out = vec![0.0; blocks];
        for (x, &b) in v.iter().zip(&block_of) {
            out[b] += x;
        }
        out
    };
    let wt = grid.uniform_weight();
    let mean = coarse(&micro.mean);
    let refc = coarse(reference);
    let dist: f64 = mean.iter().zip(&refc).map(|(a, b)| wt * (a - b).abs()).sum();
    let nr = micro.samples.len();
    let noise = if nr < 2 {
        f64::INFINITY
    } else {
        let mut var = vec![0.0; blocks];
        for s in &micro.samples {
            for ((v, x), m) in var.iter_mut().zip(coarse(s)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let nrf = nr as f64;
        (2.0 / PI).sqrt() * var.iter().map(|v| wt * (v / (nrf - 1.0) / nrf).sqrt()).sum::<f64>()
    };
    Ok((dist, noise))
}

/// Runs the epsilon ladder and compares with the kinetic reference.
pub fn kinetic_comparison(
    base: &DisorderEnsemble,
    w0: &Distribution,
    cfg: &KineticConfig,
) -> Result<KineticComparisonReport> {
    if cfg.epsilons.is_empty() || cfg.taus.is_empty() {
        return Err(QkinError::InvalidParameter("empty epsilon ladder or checkpoint list".into()));
    }
    if cfg.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(QkinError::InvalidParameter("couplings must be positive".into()));
    }
    let tau_max = cfg.taus.iter().cloned().fold(0.0, f64::max);
    let total_cost: f64 = cfg
        .epsilons
        .iter()
        .map(|&e| evolution_cost(&base.with_epsilon(e), tau_max, 0.1 / base.dim as f64))
        .sum();
    if total_cost > cfg.budget {
        return Err(QkinError::BudgetExceeded {
            estimate: total_cost,
            budget: cfg.budget,
        });
    }
    let eta = match cfg.eta {
        Some(e) => e,
        None => reference_eta(w0)?,
    };
    let reference = kinetic_reference(w0, &cfg.taus, eta, cfg.solver_tolerance)?;
    let mut distances = Vec::new();
    let mut errors = Vec::new();
    let mut flags = Vec::new();
    for &eps in &cfg.epsilons {
        let ens = base.with_epsilon(eps);
        let avg = averaged_momentum_distribution(&ens, w0, &cfg.taus, cfg.budget)?;
        let mut drow = Vec::new();
        let mut erow = Vec::new();
        let mut frow = Vec::new();
        for (a, r) in avg.iter().zip(&reference) {
            let (dist, err) = block_distance(w0.grid(), a, r, cfg.block)?;
            drow.push(dist);
            erow.push(err);
            frow.push(err > 0.3 * dist);
        }
        distances.push(drow);
        errors.push(erow);
        flags.push(frow);
    }
    let nt = cfg.taus.len();
    let decreasing = (0..nt)
        .map(|t| distances.windows(2).all(|w| w[1][t] < w[0][t]))
        .collect();
    let rates = (0..nt)
        .map(|t| {
            let pts: Vec<(f64, f64)> = cfg
                .epsilons
                .iter()
                .zip(&distances)
                .filter(|(_, d)| d[t] > 0.0)
                .map(|(e, d)| (e.ln(), d[t].ln()))
                .collect();
            if pts.len() >= 2 {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                Some(linear_fit(&x, &y).slope)
            } else {
                None
            }
        })
        .collect();
    Ok(KineticComparisonReport {
        epsilons: cfg.epsilons.clone(),
        taus: cfg.taus.clone(),
        block: cfg.block,
        eta,
        n_real: base.n_real,
        distances,
        statistical_errors: errors,
        inconclusive: flags,
        decreasing,
        rates,
    })
}

/// Gaussian bump `exp(-|k - k0|^2 / (2 sigma^2))` on the torus grid, with
/// periodic differences.
pub fn gaussian_bump(grid: Arc<MomentumGrid>, k0: &[f64], sigma: f64) -> Result<Distribution> {
    if k0.len() != grid.dim() || !(sigma > 0.0) {
        return Err(QkinError::InvalidParameter("bump centre or width invalid".into()));
    }
    Distribution::from_fn(grid, Statistics::Boltzmann, |k| {
        let r2: f64 = k
            .iter()
            .zip(k0)
            .map(|(a, b)| crate::collision_linear::wrap(a - b).powi(2))
            .sum();
        (-0.5 * r2 / (sigma * sigma)).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(eps: f64) -> DisorderEnsemble {
        DisorderEnsemble::new(2, 16, eps, DisorderLaw::GaussianUnit, 7, 4).unwrap()
    }

    #[test]
    fn potential_is_reproducible_and_normalized() {
        let e = DisorderEnsemble::new(3, 32, 0.5, DisorderLaw::GaussianUnit, 3, 2).unwrap();
        let a = e.sample_potential(0).unwrap();
        assert_eq!(a, e.sample_potential(0).unwrap());
        let b = e.sample_potential(1).unwrap();
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 5.0 / n.sqrt());
        assert!((var - 1.0).abs() < 5.0 / n.sqrt() * 2f64.sqrt());
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n;
        assert!(corr.abs() < 5.0 / n.sqrt());
        assert!(e.sample_potential(2).is_err());
    }

    #[test]
    fn free_plane_wave_only_picks_up_a_phase() {
        let grid = Arc::new(MomentumGrid::torus(2, 16).unwrap());
        let mut w0 = vec![0.0; grid.len()];
        w0[37] = 1.0;
        let w0 = Distribution::new(grid.clone(), w0, Statistics::Boltzmann).unwrap();
        let psi = random_phase_state(&w0, 1).unwrap();
        let v = vec![0.0; grid.len()];
        let out = evolve(&psi, &v, 0.3, 5.0, 0.05).unwrap();
        let om: f64 = grid.node(37).iter().map(|k| 1.0 - k.cos()).sum();
        let phase = Complex64::from_polar(1.0, -om * 5.0);
        for (a, b) in out.amplitudes.iter().zip(&psi.amplitudes) {
            assert!((a - b * phase).norm() < 1e-12);
        }
    }

    #[test]
    fn split_step_is_second_order() {
        let e = ens(0.5);
        let grid = e.momentum_grid().unwrap();
        let w0 = gaussian_bump(grid, &[1.0, 0.0], 0.5).unwrap();
        let (v, psi) = realization_state(&e, &w0, 0).unwrap();
        let mut fft = LatticeFft::new(2, 16);
        let run = |dt: f64| evolve(&psi, &v, 0.5, 4.0, dt).unwrap().momentum_distribution(&mut LatticeFft::new(2, 16));
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let d1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let d2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).sum();
        let order = (d1 / d2).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
        let _ = psi.momentum_distribution(&mut fft);
    }

    #[test]
    fn random_phase_state_reproduces_w0() {
        let grid = Arc::new(MomentumGrid::torus(2, 8).unwrap());
        let w0 = gaussian_bump(grid.clone(), &[0.5, -1.0], 0.7).unwrap();
        let psi = random_phase_state(&w0, 11).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        let total: f64 = w0.values().iter().sum();
        let p = psi.momentum_distribution(&mut LatticeFft::new(2, 8));
        for (x, w) in p.iter().zip(w0.values()) {
            assert!((x * total - w).abs() < 1e-12);
        }
        assert!(random_phase_state(&Distribution::zeros(grid, Statistics::Boltzmann), 1).is_err());
    }

    #[test]
    fn zero_time_returns_w0_and_mass_is_kept() {
        let e = ens(0.25);
        let grid = e.momentum_grid().unwrap();
        let w0 = gaussian_bump(grid, &[1.0, 0.5], 0.6).unwrap();
        let avg = averaged_momentum_distribution(&e, &w0, &[0.0, 0.5], DEFAULT_BUDGET).unwrap();
        assert_eq!(avg[0].mean, w0.values());
        let total: f64 = w0.values().iter().sum();
        let m: f64 = avg[1].mean.iter().sum();
        assert!((m - total).abs() < 1e-9 * total);
    }

    #[test]
    fn budget_guard_refuses() {
        let e = ens(0.01);
        let grid = e.momentum_grid().unwrap();
        let w0 = gaussian_bump(grid, &[1.0, 0.5], 0.6).unwrap();
        assert!(matches!(
            averaged_momentum_distribution(&e, &w0, &[10.0], 1e6),
            Err(QkinError::BudgetExceeded { .. })
        ));
    }
}
