use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{
    solve_inhomogeneous, CollisionOperator, FlightScheme, LinearPropagator, SolverConfig, Splitting,
};
use crate::collision_linear::{CollisionMatrix, PotentialSpectrum};
use crate::dispersion::DispersionModel;
use crate::error::{check_len, QkinError, Result};
use crate::grids::{
    energy_shell, median_energy_spacing, smeared_delta, MomentumGrid, SpatialGrid, Statistics,
    WignerField,
};
use crate::stats::linear_fit;

/// Relative shell weight below which nodes are dropped from the generator.
const ACTIVE_CUTOFF: f64 = 1e-10;
/// Eigenvalues below this fraction of the largest count as null modes.
const NULL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMethod {
    ChapmanEnskog,
    GreenKubo,
    MeanSquareDisplacement,
}

/// The linear collision generator restricted to a smeared energy shell,
///
/// `(L f)_a = 2 pi sum_b thetahat(k_a - k_b) s_b (f_b - f_a)`,
/// `s_b = w_b delta_eta(omega_b - E)`,
///
/// held in the symmetric form `A = -S^{1/2} L S^{-1/2}`.
#[derive(Clone, Debug)]
pub struct ShellGenerator {
    grid: Arc<MomentumGrid>,
    model: DispersionModel,
    energy: f64,
    eta: f64,
    active: Vec<usize>,
    s: Vec<f64>,
    density: Vec<f64>,
    /// `2 pi thetahat(k_a - k_b)` on active nodes, zero diagonal.
    kernel: DMatrix<f64>,
    rates: Vec<f64>,
    a: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    velocities: DMatrix<f64>,
    gap: f64,
    lambda_max: f64,
}

impl ShellGenerator {
    pub fn new(
        grid: Arc<MomentumGrid>,
        model: &DispersionModel,
        spectrum: &PotentialSpectrum,
        energy: f64,
        eta: f64,
    ) -> Result<Self> {
        let shell = energy_shell(&grid, model, energy, eta)?;
        let omegas = grid.omegas(model)?;
        let smax = shell.weights.iter().cloned().fold(0.0, f64::max);
        let active: Vec<usize> = (0..grid.len())
            .filter(|&i| shell.weights[i] > ACTIVE_CUTOFF * smax)
            .collect();
        if active.len() < 2 {
            return Err(QkinError::DegenerateShell {
                energy,
                reason: format!("only {} node(s) on the shell", active.len()),
            });
        }
        let na = active.len();
        let s: Vec<f64> = active.iter().map(|&i| shell.weights[i]).collect();
        let density: Vec<f64> = active
            .iter()
            .map(|&i| smeared_delta(omegas[i] - energy, eta))
            .collect();
        let periodic = grid.is_periodic();
        let d = grid.dim();
        let mut kernel = DMatrix::<f64>::zeros(na, na);
        let mut q = vec![0.0; d];
        for a in 0..na {
            let ka = grid.node(active[a]);
            for b in (a + 1)..na {
                let kb = grid.node(active[b]);
                for x in 0..d {
                    q[x] = ka[x] - kb[x];
                }
                let t = spectrum.eval(&q, periodic);
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(QkinError::InvalidSpectrum {
                        q: q.clone(),
                        value: t,
                    });
                }
                kernel[(a, b)] = 2.0 * PI * t;
                kernel[(b, a)] = 2.0 * PI * t;
            }
        }
        let rates: Vec<f64> = (0..na)
            .map(|a| (0..na).map(|b| kernel[(a, b)] * s[b]).sum())
            .collect();
        let sq: Vec<f64> = s.iter().map(|x| x.sqrt()).collect();
        let mut amat = DMatrix::<f64>::zeros(na, na);
        for a in 0..na {
            for b in 0..na {
                amat[(a, b)] = -kernel[(a, b)] * sq[a] * sq[b];
            }
            amat[(a, a)] = rates[a];
        }
        let eig = SymmetricEigen::new(amat.clone());
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if !(lambda_max > 0.0) {
            return Err(QkinError::DegenerateShell {
                energy,
                reason: "the generator vanishes on the shell".into(),
            });
        }
        let tol = NULL_TOL * lambda_max;
        let nulls = eig.eigenvalues.iter().filter(|&&l| l <= tol).count();
        if nulls != 1 {
            return Err(QkinError::DegenerateShell {
                energy,
                reason: format!("{nulls} null modes; the shell is not connected by collisions"),
            });
        }
        let gap = eig
            .eigenvalues
            .iter()
            .cloned()
            .filter(|&l| l > tol)
            .fold(f64::INFINITY, f64::min);
        let mut velocities = DMatrix::<f64>::zeros(na, d);
        let mut v = vec![0.0; d];
        for (a, &i) in active.iter().enumerate() {
            model.velocity_into(grid.node(i), &mut v)?;
            for x in 0..d {
                velocities[(a, x)] = v[x];
            }
        }
        Ok(Self {
            grid,
            model: model.clone(),
            energy,
            eta,
            active,
            s,
            density,
            kernel,
            rates,
            a: amat,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            velocities,
            gap,
            lambda_max,
        })
    }

    pub fn from_matrix(m: &CollisionMatrix, energy: f64) -> Result<Self> {
        Self::new(m.grid().clone(), m.model(), m.spectrum(), energy, m.eta())
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn model(&self) -> &DispersionModel {
        &self.model
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn shell_mass(&self) -> f64 {
        self.s.iter().sum()
    }

    /// Smallest non-zero relaxation rate.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Shell average of the group velocity.
    pub fn mean_velocity(&self) -> Vec<f64> {
        let total = self.shell_mass();
        (0..self.grid.dim())
            .map(|x| {
                (0..self.s.len())
                    .map(|a| self.s[a] * self.velocities[(a, x)])
                    .sum::<f64>()
                    / total
            })
            .collect()
    }

    /// Columns `S^{1/2} (v - <v>)`.
    fn centered_velocities(&self) -> DMatrix<f64> {
        let vbar = self.mean_velocity();
        let mut u = self.velocities.clone();
        for a in 0..self.s.len() {
            let sq = self.s[a].sqrt();
            for (x, vb) in vbar.iter().enumerate() {
                u[(a, x)] = sq * (u[(a, x)] - vb);
            }
        }
        u
    }

    /// `D = (1/d) <(v - <v>) . chi>` with `L chi = -(v - <v>)` solved on the
    /// complement of the null mode.
    pub fn chapman_enskog(&self) -> f64 {
        let u = self.centered_velocities();
        let proj = self.eigenvectors.transpose() * &u;
        let tol = NULL_TOL * self.lambda_max;
        let mut acc = 0.0;
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            if lam > tol {
                acc += proj.row(j).iter().map(|c| c * c).sum::<f64>() / lam;
            }
        }
        acc / (self.grid.dim() as f64 * self.shell_mass())
    }

    /// Velocity autocorrelation `C(t) = <(v - <v>) . e^{tL} (v - <v>)>`
    /// from the spectral decomposition.
    pub fn velocity_correlation(&self, t: f64) -> f64 {
        let u = self.centered_velocities();
        let proj = self.eigenvectors.transpose() * &u;
        let mut acc = 0.0;
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            acc += (-lam.max(0.0) * t).exp() * proj.row(j).iter().map(|c| c * c).sum::<f64>();
        }
        acc / self.shell_mass()
    }

    /// Time integral of the velocity autocorrelation, which is propagated
    /// with classical RK4 and integrated by Simpson's rule up to `12 / gap`,
    /// plus an exponential tail.
    pub fn green_kubo(&self) -> GreenKuboTrace {
        let u = self.centered_velocities();
        let t_end = 12.0 / self.gap;
        let dt0 = (0.05 / self.gap).min(0.2 / self.lambda_max);
        let mut n = (t_end / dt0).ceil() as usize;
        n += n % 2;
        let dt = t_end / n as f64;
        let total = self.shell_mass();
        let corr = |y: &DMatrix<f64>| u.component_mul(y).sum() / total;
        let mut y = u.clone();
        let mut times = Vec::with_capacity(n + 1);
        let mut values = Vec::with_capacity(n + 1);
        times.push(0.0);
        values.push(corr(&y));
        for k in 1..=n {
            let k1 = -(&self.a * &y);
            let k2 = -(&self.a * (&y + &k1 * (0.5 * dt)));
            let k3 = -(&self.a * (&y + &k2 * (0.5 * dt)));
            let k4 = -(&self.a * (&y + &k3 * dt));
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            times.push(k as f64 * dt);
            values.push(corr(&y));
        }
        let mut integral = values[0] + values[n];
        for (k, v) in values.iter().enumerate().take(n).skip(1) {
            integral += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        integral *= dt / 3.0;
        let back = n / 6;
        let (c_end, c_back) = (values[n], values[n - back]);
        let tail = if c_end > 0.0 && c_back > c_end {
            let rate = (c_back / c_end).ln() / (back as f64 * dt);
            c_end / rate
        } else {
            0.0
        };
        GreenKuboTrace {
            times,
            correlation: values,
            integral: (integral + tail) / self.grid.dim() as f64,
            tail: tail / self.grid.dim() as f64,
        }
    }

    /// `exp(t L)` acting on the phase-space density `rho_a = D_a f_a`.
    fn density_propagator(&self, t: f64) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, lam) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut((-lam.max(0.0) * t).exp());
        }
        let mut p = &scaled * self.eigenvectors.transpose();
        let r: Vec<f64> = self.density.iter().map(|d| d.sqrt()).collect();
        for a in 0..r.len() {
            for b in 0..r.len() {
                p[(a, b)] *= r[a] / r[b];
            }
        }
        p
    }
}

/// Sampled velocity autocorrelation and its (already `1/d` scaled) integral.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenKuboTrace {
    pub times: Vec<f64>,
    pub correlation: Vec<f64>,
    pub integral: f64,
    pub tail: f64,
}

/// The shell generator acts on the density `rho_a = D_a f_a` so that
/// `rho` stays a mass density on the full momentum grid.
impl CollisionOperator for ShellGenerator {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn statistics(&self) -> Statistics {
        Statistics::Boltzmann
    }

    fn apply_values(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), w.len())?;
        let wt = self.grid.uniform_weight();
        let rho = DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| w[i]));
        let gain = &self.kernel * &rho;
        let mut out = vec![0.0; w.len()];
        for (a, &i) in self.active.iter().enumerate() {
            out[i] = self.density[a] * wt * gain[a] - self.rates[a] * rho[a];
        }
        Ok(out)
    }

    fn linear_propagator(&self, dt: f64) -> Option<Result<LinearPropagator>> {
        Some(Ok(LinearPropagator::new(
            self.active.clone(),
            self.density_propagator(dt),
        )))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub energy: f64,
    pub eta: f64,
    pub method: DiffusionMethod,
    pub d_kin: f64,
    pub green_kubo: f64,
    /// `|D_GK - D_CE| / D_CE`
    pub relative_difference: f64,
    pub gap: f64,
    pub lambda_max: f64,
    pub shell_mass: f64,
    pub mean_velocity: Vec<f64>,
    pub active_nodes: usize,
}

/// Diffusion constant at energy `energy` from the shell restriction of `m`.
pub fn diffusion_coefficient(m: &CollisionMatrix, energy: f64) -> Result<DiffusionReport> {
    let gen = ShellGenerator::from_matrix(m, energy)?;
    Ok(report(&gen))
}

fn report(gen: &ShellGenerator) -> DiffusionReport {
    let ce = gen.chapman_enskog();
    let gk = gen.green_kubo().integral;
    DiffusionReport {
        energy: gen.energy,
        eta: gen.eta,
        method: DiffusionMethod::ChapmanEnskog,
        d_kin: ce,
        green_kubo: gk,
        relative_difference: (gk - ce).abs() / ce.abs(),
        gap: gen.gap,
        lambda_max: gen.lambda_max,
        shell_mass: gen.shell_mass(),
        mean_velocity: gen.mean_velocity(),
        active_nodes: gen.active.len(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaLadderReport {
    pub energy: f64,
    pub spacing: f64,
    pub etas: Vec<f64>,
    pub values: Vec<f64>,
    /// `2 D(eta_1) - D(eta_2)`, assuming `D` is linear in `eta`.
    pub extrapolated: f64,
    /// Always set: the extrapolation is a heuristic.
    pub heuristic: bool,
}

/// `D` at `eta = 2 dw` and `4 dw`, with `dw` the median shell energy spacing,
/// and the linear extrapolation to `eta -> 0`.
pub fn diffusion_eta_ladder(
    grid: Arc<MomentumGrid>,
    model: &DispersionModel,
    spectrum: &PotentialSpectrum,
    energy: f64,
) -> Result<EtaLadderReport> {
    let spacing = median_energy_spacing(&grid, model, energy)?;
    let etas = vec![2.0 * spacing, 4.0 * spacing];
    let values = etas
        .iter()
        .map(|&eta| Ok(ShellGenerator::new(grid.clone(), model, spectrum, energy, eta)?.chapman_enskog()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EtaLadderReport {
        energy,
        spacing,
        extrapolated: 2.0 * values[0] - values[1],
        etas,
        values,
        heuristic: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsdConfig {
    /// Spatial cells along the transport axis.
    pub cells: usize,
    pub side: f64,
    /// Width of the initial Gaussian bump.
    pub sigma_r: f64,
    /// Upper bound on the splitting step; the step is also capped at `0.1 / gap`.
    pub dt: f64,
    /// Fit window start and end, in units of `1 / gap`.
    pub fit_start: f64,
    pub fit_end: f64,
    pub samples: usize,
}

impl Default for MsdConfig {
    fn default() -> Self {
        Self {
            cells: 128,
            side: 64.0,
            sigma_r: 2.0,
            dt: 0.1,
            fit_start: 3.0,
            fit_end: 30.0,
            samples: 60,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MsdReport {
    pub times: Vec<f64>,
    /// Spatial variance per transport axis at each time.
    pub variances: Vec<Vec<f64>>,
    pub slopes: Vec<f64>,
    /// `sum(slopes) / (2 d)`
    pub d_msd: f64,
    pub fit_window: (f64, f64),
}

/// Diffusion constant from the growth of the spatial variance of a bump
/// that starts in equilibrium on the shell, with one one-dimensional run per
/// momentum axis.
pub fn msd_diffusion(gen: &ShellGenerator, cfg: &MsdConfig) -> Result<MsdReport> {
    if cfg.cells < 8 || !cfg.cells.is_multiple_of(2) || !(cfg.side > 0.0) || !(cfg.sigma_r > 0.0) {
        return Err(QkinError::InvalidParameter(
            "msd needs an even number of at least 8 cells and positive lengths".into(),
        ));
    }
    if !(cfg.fit_end > cfg.fit_start && cfg.fit_start >= 0.0 && cfg.samples >= 4) {
        return Err(QkinError::InvalidParameter("msd fit window is empty".into()));
    }
    let d = gen.grid.dim();
    let t_end = cfg.fit_end / gen.gap;
    let t_start = cfg.fit_start / gen.gap;
    let snapshot = t_end / cfg.samples as f64;
    let dt = cfg.dt.min(0.1 / gen.gap);
    let solver = SolverConfig {
        dt,
        t_max: t_end,
        snapshot_every: snapshot,
        splitting: Splitting::Strang,
        ..SolverConfig::default()
    };
    let mut full_density = vec![0.0; gen.grid.len()];
    for (a, &i) in gen.active.iter().enumerate() {
        full_density[i] = gen.density[a];
    }
    let center = 0.5 * cfg.side;
    let mut variances = Vec::with_capacity(d);
    let mut slopes = Vec::with_capacity(d);
    let mut times = Vec::new();
    for axis in 0..d {
        let spatial = SpatialGrid::with_axes(cfg.cells, cfg.side, vec![axis])?;
        let mut values = Vec::with_capacity(spatial.cells() * full_density.len());
        for c in 0..spatial.cells() {
            let x = spatial.center(c)[0] - center;
            let g = (-0.5 * x * x / (cfg.sigma_r * cfg.sigma_r)).exp();
            values.extend(full_density.iter().map(|d| d * g));
        }
        let f0 = WignerField::new(spatial, gen.grid.clone(), values, Statistics::Boltzmann)?;
        let mut t_axis = Vec::new();
        let mut var_axis = Vec::new();
        let mut observe = |t: f64, f: &WignerField| {
            t_axis.push(t);
            var_axis.push(spatial_variance(f, center));
        };
        solve_inhomogeneous(&f0, gen, &gen.model, &solver, FlightScheme::Cubic, &mut observe)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = t_axis
            .iter()
            .zip(&var_axis)
            .filter(|(t, _)| **t >= t_start * (1.0 - 1e-12))
            .map(|(t, v)| (*t, *v))
            .unzip();
        slopes.push(linear_fit(&xs, &ys).slope);
        variances.push(var_axis);
        times = t_axis;
    }
    Ok(MsdReport {
        times,
        variances,
        d_msd: slopes.iter().sum::<f64>() / (2.0 * d as f64),
        slopes,
        fit_window: (t_start, t_end),
    })
}

/// Variance of the spatial density about `center`, using minimum-image
/// displacements.
fn spatial_variance(f: &WignerField, center: f64) -> f64 {
    let rho = f.density();
    let sp = f.spatial();
    let side = sp.side;
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (c, r) in rho.iter().enumerate() {
        let mut x = sp.center(c)[0] - center;
        x -= side * (x / side).round();
        m0 += r;
        m1 += r * x;
        m2 += r * x * x;
    }
    let mean = m1 / m0;
    m2 / m0 - mean * mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_gen(n: usize, spectrum: PotentialSpectrum) -> ShellGenerator {
        let g = Arc::new(MomentumGrid::torus(3, n).unwrap());
        let m = DispersionModel::lattice(3).unwrap();
        ShellGenerator::new(g, &m, &spectrum, 3.0, 1.0).unwrap()
    }

    #[test]
    fn constant_spectrum_has_closed_form() {
        let gen = lattice_gen(8, PotentialSpectrum::Constant(1.0));
        let lam = 2.0 * PI * gen.shell_mass();
        assert!((gen.gap() - lam).abs() < 1e-9 * lam);
        let vbar = gen.mean_velocity();
        assert!(vbar.iter().all(|v| v.abs() < 1e-12));
        let v2: f64 = (0..gen.s.len())
            .map(|a| gen.s[a] * (0..3).map(|x| gen.velocities[(a, x)].powi(2)).sum::<f64>())
            .sum::<f64>()
            / gen.shell_mass();
        let expected = v2 / (3.0 * lam);
        assert!((gen.chapman_enskog() - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn green_kubo_matches_chapman_enskog() {
        let spec = PotentialSpectrum::Gaussian {
            amplitude: 1.0,
            width: 1.0,
        };
        let gen = lattice_gen(6, spec);
        let ce = gen.chapman_enskog();
        let gk = gen.green_kubo().integral;
        assert!((gk - ce).abs() < 1e-3 * ce, "{gk} vs {ce}");
    }

    #[test]
    fn scaling_spectrum_scales_diffusion() {
        let spec = PotentialSpectrum::Gaussian {
            amplitude: 1.0,
            width: 1.5,
        };
        let d1 = lattice_gen(6, spec.clone()).chapman_enskog();
        let d2 = lattice_gen(6, spec.scaled(2.5)).chapman_enskog();
        assert!((d1 / d2 - 2.5).abs() < 1e-9);
    }

    #[test]
    fn spectral_and_stepped_correlations_agree() {
        let gen = lattice_gen(6, PotentialSpectrum::Gaussian {
            amplitude: 0.7,
            width: 1.0,
        });
        let trace = gen.green_kubo();
        for k in [0, 10, trace.times.len() / 2] {
            let exact = gen.velocity_correlation(trace.times[k]);
            assert!((trace.correlation[k] - exact).abs() < 1e-5 * gen.velocity_correlation(0.0));
        }
    }

    #[test]
    fn generator_preserves_mass_and_density_steady_state() {
        let gen = lattice_gen(6, PotentialSpectrum::Constant(1.0));
        let n = gen.grid.len();
        let mut rho = vec![0.0; n];
        for (a, &i) in gen.active.iter().enumerate() {
            rho[i] = gen.density[a];
        }
        let out = gen.apply_values(&rho).unwrap();
        assert!(out.iter().all(|x| x.abs() < 1e-12));
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
        let out = gen.apply_values(&w).unwrap();
        assert!(out.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn disconnected_shell_is_degenerate() {
        let g = Arc::new(MomentumGrid::torus(1, 16).unwrap());
        let m = DispersionModel::lattice(1).unwrap();
        // no momentum transfer at all
        let spec = PotentialSpectrum::Custom(Arc::new(|q: &[f64]| if q[0].abs() < 1e-9 { 1.0 } else { 0.0 }));
        assert!(matches!(
            ShellGenerator::new(g, &m, &spec, 1.0, 0.3),
            Err(QkinError::DegenerateShell { .. })
        ));
    }

    #[test]
    fn out_of_band_energy_is_empty() {
        let g = Arc::new(MomentumGrid::torus(3, 6).unwrap());
        let m = DispersionModel::lattice(3).unwrap();
        assert!(matches!(
            ShellGenerator::new(g, &m, &PotentialSpectrum::Constant(1.0), 50.0, 0.5),
            Err(QkinError::EmptyShell { .. })
        ));
    }
}
