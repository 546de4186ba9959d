use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_dt, evolution_cost, evolve, realization_state, DisorderEnsemble, LatticeFft, Wavefunction, DEFAULT_BUDGET};
use crate::error::{QkinError, Result};
use crate::grids::{Distribution, MomentumGrid, SpatialGrid, Statistics, WignerField};

/// Largest field the transform will materialize, in stored values.
const MAX_FIELD_VALUES: usize = 1 << 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Hann,
    Rectangular,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WignerConfig {
    /// Largest offset `|eta_a|` kept per axis; `None` means `L/4`.
    pub cutoff: Option<usize>,
    pub taper: Taper,
    /// Lattice sites per kinetic cell and axis; `None` means `round(1/eps)`.
    pub cell: Option<usize>,
}

impl WignerConfig {
    fn resolve(&self, side: usize, epsilon: f64) -> Result<(usize, usize)> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(QkinError::InvalidParameter(format!("scale must be positive, got {epsilon}")));
        }
        let cutoff = self.cutoff.unwrap_or(side / 4);
        if cutoff > side / 2 {
            return Err(QkinError::InvalidParameter(format!(
                "offset cutoff {cutoff} exceeds L/2 = {}; the transform would alias",
                side / 2
            )));
        }
        let cell = self.cell.unwrap_or_else(|| (1.0 / epsilon).round().max(1.0) as usize);
        if cell == 0 || !side.is_multiple_of(cell) || side / cell < 2 {
            return Err(QkinError::InvalidParameter(format!(
                "cell side {cell} must divide L = {side} with at least two cells per axis"
            )));
        }
        Ok((cutoff, cell))
    }

    fn weight(&self, eta: &[i64], cutoff: usize) -> f64 {
        match self.taper {
            Taper::Rectangular => 1.0,
            Taper::Hann => eta
                .iter()
                .map(|&e| 0.5 * (1.0 + (PI * e as f64 / (cutoff as f64 + 1.0)).cos()))
                .product(),
        }
    }
}

/// Offsets in the window as `(eta, a, b)` with `a = ceil(eta/2)`,
/// `b = floor(eta/2)` per axis and the taper weight folded in.
struct Offsets {
    dim: usize,
    eta: Vec<i64>,
    plus: Vec<i64>,
    minus: Vec<i64>,
    weight: Vec<f64>,
}

impl Offsets {
    fn new(dim: usize, cutoff: usize, cfg: &WignerConfig) -> Self {
        let c = cutoff as i64;
        let span = 2 * c + 1;
        let count = span.pow(dim as u32) as usize;
        let mut out = Self {
            dim,
            eta: Vec::with_capacity(count * dim),
            plus: Vec::with_capacity(count * dim),
            minus: Vec::with_capacity(count * dim),
            weight: Vec::with_capacity(count),
        };
        let mut e = vec![0i64; dim];
        for idx in 0..count {
            let mut rem = idx as i64;
            for a in (0..dim).rev() {
                e[a] = rem % span - c;
                rem /= span;
            }
            for &x in &e {
                out.eta.push(x);
                out.plus.push(x.div_euclid(2) + x.rem_euclid(2));
                out.minus.push(x.div_euclid(2));
            }
            out.weight.push(cfg.weight(&e, cutoff));
        }
        out
    }

    fn len(&self) -> usize {
        self.weight.len()
    }

    fn eta(&self, o: usize) -> &[i64] {
        &self.eta[o * self.dim..(o + 1) * self.dim]
    }
}

fn site(coords: &[i64], side: usize) -> usize {
    let l = side as i64;
    coords.iter().fold(0, |acc, &x| acc * side + x.rem_euclid(l) as usize)
}

/// `sum_x sum_psi psi(x + a) conj(psi(x - b))` over the sites `xs`, per offset.
fn kernel_sums(psis: &[&[Complex64]], dim: usize, side: usize, xs: &[Vec<i64>], off: &Offsets) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); off.len()];
    let mut p = vec![0i64; dim];
    let mut q = vec![0i64; dim];
    for x in xs {
        for (o, s) in out.iter_mut().enumerate() {
            for a in 0..dim {
                p[a] = x[a] + off.plus[o * dim + a];
                q[a] = x[a] - off.minus[o * dim + a];
            }
            let (i, j) = (site(&p, side), site(&q, side));
            for psi in psis {
                *s += psi[i] * psi[j].conj();
            }
        }
    }
    out
}

fn coords_of(i: usize, dim: usize, side: usize) -> Vec<i64> {
    let mut out = vec![0i64; dim];
    let mut rem = i;
    for a in (0..dim).rev() {
        out[a] = (rem % side) as i64;
        rem /= side;
    }
    out
}

/// Wigner function of a single wavefunction on kinetic cells of side
/// `cell * eps`.
pub fn wigner_transform(psi: &Wavefunction, epsilon: f64, cfg: &WignerConfig) -> Result<WignerField> {
    wigner_transform_many(std::slice::from_ref(psi), epsilon, cfg)
}

/// Wigner function of the averaged kernel `<psi(x) conj(psi(y))>` over the
/// given wavefunctions.
///
/// For cell `r` of volume `|r|`,
/// `W(r, k) = |r|^{-1} sum_{x in r} sum_eta h(eta) e^{-ik.eta} R(x + a, x - b)`
/// with `a + b = eta` the ceil/floor split of `eta` and `h` the taper, so
/// that `int dk W(r, k)` is the position-space mass of the cell divided by
/// its volume.
pub fn wigner_transform_many(psis: &[Wavefunction], epsilon: f64, cfg: &WignerConfig) -> Result<WignerField> {
    let first = psis
        .first()
        .ok_or_else(|| QkinError::InvalidParameter("no wavefunctions given".into()))?;
    let (dim, side) = (first.dim, first.side);
    if psis.iter().any(|p| p.dim != dim || p.side != side) {
        return Err(QkinError::GridMismatch("wavefunctions live on different lattices".into()));
    }
    let (cutoff, cell) = cfg.resolve(side, epsilon)?;
    let grid = Arc::new(MomentumGrid::torus(dim, side)?);
    let n = grid.len();
    let per_axis = side / cell;
    let cells = per_axis.pow(dim as u32);
    if cells.saturating_mul(n) > MAX_FIELD_VALUES {
        return Err(QkinError::InvalidParameter(format!(
            "Wigner field of {cells} cells x {n} momenta exceeds the size cap {MAX_FIELD_VALUES}"
        )));
    }
    let spatial = SpatialGrid::new(dim, per_axis, side as f64 * epsilon)?;
    let vol = spatial.cell_volume();
    let off = Offsets::new(dim, cutoff, cfg);
    let amps: Vec<&[Complex64]> = psis.iter().map(|p| p.amplitudes.as_slice()).collect();
    let scale = 1.0 / (psis.len() as f64 * vol);
    let mut values = vec![0.0; cells * n];
    values.par_chunks_mut(n).enumerate().for_each_init(
        || (LatticeFft::new(dim, side), vec![Complex64::new(0.0, 0.0); n]),
        |(fft, buf), (c, out)| {
            let corner = coords_of(c, dim, per_axis);
            let xs: Vec<Vec<i64>> = (0..cell.pow(dim as u32))
                .map(|s| {
                    coords_of(s, dim, cell)
                        .iter()
                        .zip(&corner)
                        .map(|(d, c0)| c0 * cell as i64 + d)
                        .collect()
                })
                .collect();
            let sums = kernel_sums(&amps, dim, side, &xs, &off);
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (o, s) in sums.iter().enumerate() {
                let eta = off.eta(o);
                // e^{-ik eta} with k = -pi + 2 pi j / L contributes (-1)^eta
                let sign = if eta.iter().sum::<i64>().rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                buf[site(eta, side)] += s * (sign * off.weight[o]);
            }
            fft.forward(buf);
            for (w, b) in out.iter_mut().zip(buf.iter()) {
                *w = b.re * scale;
            }
        },
    );
    Ok(WignerField::from_raw(spatial, grid, values, Statistics::Boltzmann))
}

/// Kinetic-scale box `Lambda` (in units where the torus has side `L eps`)
/// times a momentum box `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableWindow {
    pub r_lo: Vec<f64>,
    pub r_hi: Vec<f64>,
    pub k_lo: Vec<f64>,
    pub k_hi: Vec<f64>,
}

impl ObservableWindow {
    /// Whole torus and the whole Brillouin zone.
    pub fn full(dim: usize) -> Self {
        Self {
            r_lo: vec![0.0; dim],
            r_hi: vec![f64::INFINITY; dim],
            k_lo: vec![-PI - 1.0; dim],
            k_hi: vec![PI + 1.0; dim],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if [&self.r_lo, &self.r_hi, &self.k_lo, &self.k_hi].iter().any(|v| v.len() != dim) {
            return Err(QkinError::InvalidParameter(format!(
                "observable window needs {dim} bounds per corner"
            )));
        }
        if self.r_lo.iter().zip(&self.r_hi).any(|(a, b)| !(a < b))
            || self.k_lo.iter().zip(&self.k_hi).any(|(a, b)| !(a < b))
        {
            return Err(QkinError::InvalidParameter("observable window is empty".into()));
        }
        Ok(())
    }

    fn sites(&self, dim: usize, side: usize, epsilon: f64) -> Vec<Vec<i64>> {
        (0..side.pow(dim as u32))
            .map(|i| coords_of(i, dim, side))
            .filter(|x| {
                x.iter().enumerate().all(|(a, &xa)| {
                    let r = xa as f64 * epsilon;
                    r >= self.r_lo[a] && r < self.r_hi[a]
                })
            })
            .collect()
    }

    /// Per axis, `sum_{k_a in A_a} e^{-i k_a e}` for `e` in `-cutoff..=cutoff`.
    fn characters(&self, grid: &MomentumGrid, cutoff: usize) -> Vec<Vec<Complex64>> {
        let c = cutoff as i64;
        (0..grid.dim())
            .map(|a| {
                let ks: Vec<f64> = grid
                    .axis()
                    .iter()
                    .copied()
                    .filter(|&k| k >= self.k_lo[a] && k <= self.k_hi[a])
                    .collect();
                (-c..=c)
                    .map(|e| ks.iter().map(|&k| Complex64::from_polar(1.0, -k * e as f64)).sum())
                    .collect()
            })
            .collect()
    }
}

/// `n(Lambda, A) = int_Lambda dr int_A dk W(r, k)` for one wavefunction.
pub fn windowed_occupation(
    psi: &Wavefunction,
    epsilon: f64,
    window: &ObservableWindow,
    cfg: &WignerConfig,
) -> Result<f64> {
    let (dim, side) = (psi.dim, psi.side);
    window.validate(dim)?;
    let (cutoff, _) = cfg.resolve(side, epsilon)?;
    let grid = MomentumGrid::torus(dim, side)?;
    let xs = window.sites(dim, side, epsilon);
    let off = Offsets::new(dim, cutoff, cfg);
    let chars = window.characters(&grid, cutoff);
    let sums = kernel_sums(&[psi.amplitudes.as_slice()], dim, side, &xs, &off);
    let c = cutoff as i64;
    let total: Complex64 = sums
        .iter()
        .enumerate()
        .map(|(o, s)| {
            let chi: Complex64 = off
                .eta(o)
                .iter()
                .enumerate()
                .map(|(a, &e)| chars[a][(e + c) as usize])
                .product();
            s * chi * off.weight[o]
        })
        .sum();
    Ok(total.re / grid.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelfAveragingReport {
    pub epsilon: f64,
    pub tau: f64,
    pub n_real: usize,
    /// Volume `(L eps)^d` of the kinetic box; occupations are multiplied by
    /// it so that the state has unit mean density.
    pub box_volume: f64,
    /// One windowed occupation per realization.
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Unbiased across-realization variance.
    pub variance: f64,
    /// `variance / n_real`.
    pub variance_of_mean: f64,
}

/// Across-realization variance of the windowed occupation at kinetic time
/// `tau`, with the state normalized to unit mean density on the kinetic box.
pub fn self_averaging_variance(
    ens: &DisorderEnsemble,
    w0: &Distribution,
    tau: f64,
    window: &ObservableWindow,
    cfg: &WignerConfig,
) -> Result<SelfAveragingReport> {
    ens.validate()?;
    if ens.n_real < 10 {
        return Err(QkinError::InvalidParameter(format!(
            "self-averaging needs at least 10 realizations, got {}",
            ens.n_real
        )));
    }
    if !(tau >= 0.0) || !(ens.epsilon > 0.0) {
        return Err(QkinError::InvalidParameter("need tau >= 0 and eps > 0".into()));
    }
    window.validate(ens.dim)?;
    cfg.resolve(ens.side, ens.epsilon)?;
    let estimate = evolution_cost(ens, tau, 0.1 / ens.dim as f64);
    if estimate > DEFAULT_BUDGET {
        return Err(QkinError::BudgetExceeded {
            estimate,
            budget: DEFAULT_BUDGET,
        });
    }
    let box_volume = (ens.side as f64 * ens.epsilon).powi(ens.dim as i32);
    let samples: Vec<f64> = (0..ens.n_real)
        .into_par_iter()
        .map(|r| {
            let (v, psi) = realization_state(ens, w0, r)?;
            let dt = default_dt(ens.dim, ens.epsilon, &v);
            let psi = evolve(&psi, &v, ens.epsilon, tau / ens.epsilon, dt)?;
            Ok(box_volume * windowed_occupation(&psi, ens.epsilon, window, cfg)?)
        })
        .collect::<Result<_>>()?;
    let nr = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / nr;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nr - 1.0);
    Ok(SelfAveragingReport {
        epsilon: ens.epsilon,
        tau,
        n_real: ens.n_real,
        box_volume,
        samples,
        mean,
        variance,
        variance_of_mean: variance / nr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microscopic::{gaussian_bump, DisorderLaw};

    fn plane_wave(dim: usize, side: usize, j: &[usize]) -> Wavefunction {
        let grid = MomentumGrid::torus(dim, side).unwrap();
        let k = grid.node(grid.flat_index(j)).to_vec();
        let n = side.pow(dim as u32);
        let amps = (0..n)
            .map(|i| {
                let x = coords_of(i, dim, side);
                let ph: f64 = x.iter().zip(&k).map(|(&xa, ka)| xa as f64 * ka).sum();
                Complex64::from_polar(1.0 / (n as f64).sqrt(), ph)
            })
            .collect();
        Wavefunction::new(dim, side, amps).unwrap()
    }

    #[test]
    fn plane_wave_sits_at_its_momentum() {
        let psi = plane_wave(2, 16, &[3, 11]);
        let w = wigner_transform(&psi, 0.25, &WignerConfig::default()).unwrap();
        let g = w.grid();
        let target = g.flat_index(&[3, 11]);
        let first = w.cell(0).to_vec();
        for c in 0..w.spatial().cells() {
            for (&x, &y) in w.cell(c).iter().zip(&first) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let best = (0..g.len()).max_by(|&a, &b| first[a].total_cmp(&first[b])).unwrap();
        assert_eq!(best, target);
        let near: f64 = (0..g.len())
            .filter(|&i| {
                let j = g.multi_index(i);
                let dj = |a: usize, t: i64| ((j[a] as i64 - t).rem_euclid(16)).min((t - j[a] as i64).rem_euclid(16));
                dj(0, 3) <= 2 && dj(1, 11) <= 2
            })
            .map(|i| first[i])
            .sum::<f64>()
            * g.uniform_weight()
            * w.spatial().cell_volume()
            * w.spatial().cells() as f64;
        assert!(near > 0.95, "near-peak mass {near}");
        assert!((w.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn momentum_integral_is_the_cell_mass() {
        let grid = Arc::new(MomentumGrid::torus(2, 16).unwrap());
        let w0 = gaussian_bump(grid, &[0.7, -0.4], 0.6).unwrap();
        let psi = crate::microscopic::random_phase_state(&w0, 5).unwrap();
        let w = wigner_transform(&psi, 0.25, &WignerConfig::default()).unwrap();
        let vol = w.spatial().cell_volume();
        let dens = w.density();
        for c in 0..w.spatial().cells() {
            let (cy, cx) = (c / 4, c % 4);
            let mut mass = 0.0;
            for y in 0..4 {
                for x in 0..4 {
                    mass += psi.amplitudes[(cy * 4 + y) * 16 + cx * 4 + x].norm_sqr();
                }
            }
            assert!((dens[c] * vol - mass).abs() < 1e-10);
        }
    }

    #[test]
    fn left_half_support_stays_local() {
        let (side, eps) = (32, 0.125);
        let n = side;
        let amps: Vec<Complex64> = (0..n)
            .map(|x| {
                if x < side / 2 {
                    Complex64::from_polar((PI * (x as f64 + 0.5) / 16.0).sin(), 0.9 * x as f64)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let psi = Wavefunction::new(1, side, amps.iter().map(|a| a / norm).collect()).unwrap();
        let cfg = WignerConfig::default();
        let w = wigner_transform(&psi, eps, &cfg).unwrap();
        let cells = w.spatial().cells();
        let nk = w.grid().len();
        let wt = w.grid().uniform_weight() * w.spatial().cell_volume();
        let cutoff = side / 4;
        let mut leak = 0.0;
        let mut bound = 0.0;
        for c in cells / 2..cells {
            let l1: f64 = w.cell(c).iter().map(|x| x.abs()).sum::<f64>() * wt;
            // sites x with x + a and x - b both in [0, L/2) for some |eta| <= cutoff
            let lo = c * 8;
            let reach = cutoff.div_ceil(2);
            let near = (lo..lo + 8).any(|x| x < side / 2 + reach || x + reach >= side);
            if !near {
                assert_eq!(l1, 0.0);
            }
            leak += l1;
            let xs: Vec<Vec<i64>> = (lo..lo + 8).map(|x| vec![x as i64]).collect();
            let off = Offsets::new(1, cutoff, &cfg);
            let sums = kernel_sums(&[psi.amplitudes.as_slice()], 1, side, &xs, &off);
            bound += sums.iter().zip(&off.weight).map(|(s, h)| s.norm() * h).sum::<f64>() * nk as f64 * wt
                / w.spatial().cell_volume();
            assert!(w.density()[c].abs() < 1e-14);
        }
        assert!(leak <= bound + 1e-12, "leak {leak} bound {bound}");
        assert!(leak < 0.5);
        let _ = n;
    }

    #[test]
    fn cutoff_beyond_half_side_is_refused() {
        let psi = plane_wave(1, 16, &[2]);
        let cfg = WignerConfig {
            cutoff: Some(9),
            ..Default::default()
        };
        assert!(wigner_transform(&psi, 0.25, &cfg).is_err());
        assert!(wigner_transform(&psi, 0.99, &WignerConfig::default()).is_ok());
        assert!(wigner_transform(&psi, 0.1, &WignerConfig::default()).is_err());
    }

    #[test]
    fn window_agrees_with_the_field() {
        let grid = Arc::new(MomentumGrid::torus(2, 16).unwrap());
        let w0 = gaussian_bump(grid, &[0.7, -0.4], 0.6).unwrap();
        let psi = crate::microscopic::random_phase_state(&w0, 9).unwrap();
        let cfg = WignerConfig::default();
        let w = wigner_transform(&psi, 0.25, &cfg).unwrap();
        let win = ObservableWindow {
            r_lo: vec![1.0, 0.0],
            r_hi: vec![3.0, 2.0],
            k_lo: vec![0.0, -1.0],
            k_hi: vec![1.5, 0.5],
        };
        let direct = windowed_occupation(&psi, 0.25, &win, &cfg).unwrap();
        let g = w.grid();
        let mut from_field = 0.0;
        for c in 0..w.spatial().cells() {
            let r = w.spatial().center(c);
            if !(r[0] > 1.0 && r[0] < 3.0 && r[1] < 2.0) {
                continue;
            }
            for i in 0..g.len() {
                let k = g.node(i);
                if k[0] >= 0.0 && k[0] <= 1.5 && k[1] >= -1.0 && k[1] <= 0.5 {
                    from_field += w.cell(c)[i] * g.uniform_weight() * w.spatial().cell_volume();
                }
            }
        }
        assert!((direct - from_field).abs() < 1e-12, "{direct} vs {from_field}");
    }

    #[test]
    fn full_window_total_mass_has_no_variance() {
        let ens = DisorderEnsemble::new(2, 16, 0.25, DisorderLaw::GaussianUnit, 1, 10).unwrap();
        let grid = ens.momentum_grid().unwrap();
        let w0 = gaussian_bump(grid, &[1.0, 0.0], 0.5).unwrap();
        let rep = self_averaging_variance(&ens, &w0, 0.25, &ObservableWindow::full(2), &WignerConfig::default()).unwrap();
        assert!((rep.mean - 16.0).abs() < 1e-9);
        assert!(rep.variance < 1e-18);
        let few = DisorderEnsemble { n_real: 9, ..ens };
        assert!(self_averaging_variance(&few, &w0, 0.25, &ObservableWindow::full(2), &WignerConfig::default()).is_err());
    }
}
