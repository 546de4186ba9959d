//! Quasifree-state utilities: the permanent/determinant moment formula and
//! equilibrium distributions.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::DispersionModel;
use crate::error::{QkinError, Result};
use crate::grids::{moments_of, Distribution, MomentumGrid, Moments, Statistics};

pub const PERMANENT_CAP: usize = 12;

/// Two-point matrix `C_ij = <a(k_i)* a(k_j)>`, row-major.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    m: usize,
    data: Vec<Complex64>,
    stats: Statistics,
}

impl CorrelationMatrix {
    pub fn new(m: usize, data: Vec<Complex64>, stats: Statistics) -> Result<Self> {
        if data.len() != m * m {
            return Err(QkinError::LengthMismatch {
                expected: m * m,
                got: data.len(),
            });
        }
        if stats == Statistics::Boltzmann {
            return Err(QkinError::InvalidParameter(
                "quasifree moments need boson or fermion statistics".into(),
            ));
        }
        let scale = data.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        for i in 0..m {
            for j in 0..m {
                if (data[i * m + j] - data[j * m + i].conj()).norm() > 1e-12 * scale {
                    return Err(QkinError::Invariant(format!(
                        "correlation matrix is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = hermitian_eigenvalues(m, &data);
        let tol = 1e-10 * scale;
        if let Some(lo) = eig.first() {
            if *lo < -tol {
                return Err(QkinError::Invariant(format!(
                    "correlation matrix has negative eigenvalue {lo}"
                )));
            }
        }
        if stats == Statistics::Fermion {
            if let Some(hi) = eig.last() {
                if *hi > 1.0 + tol {
                    return Err(QkinError::Invariant(format!(
                        "fermionic correlation matrix has eigenvalue {hi} > 1"
                    )));
                }
            }
        }
        Ok(Self { m, data, stats })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn statistics(&self) -> Statistics {
        self.stats
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.m + j]
    }

    /// Block-diagonal sum `self (+) other`.
    pub fn direct_sum(&self, other: &CorrelationMatrix) -> Result<Self> {
        if self.stats != other.stats {
            return Err(QkinError::InvalidParameter("mixed statistics".into()));
        }
        let m = self.m + other.m;
        let mut data = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..self.m {
            for j in 0..self.m {
                data[i * m + j] = self.entry(i, j);
            }
        }
        for i in 0..other.m {
            for j in 0..other.m {
                data[(self.m + i) * m + self.m + j] = other.entry(i, j);
            }
        }
        Self::new(m, data, self.stats)
    }
}

/// Eigenvalues (ascending) of a Hermitian matrix via its real symmetric
/// embedding `[[A, -B], [B, A]]`, whose spectrum is that of `A + iB` doubled.
fn hermitian_eigenvalues(m: usize, data: &[Complex64]) -> Vec<f64> {
    if m == 0 {
        return Vec::new();
    }
    let big = DMatrix::from_fn(2 * m, 2 * m, |r, c| {
        let z = data[(r % m) * m + c % m];
        match (r < m, c < m) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(big).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.into_iter().step_by(2).collect()
}

/// `<prod_j a(k_j)* prod_{j=m..1} a(k'_j)>`: permanent for bosons,
/// determinant for fermions.
pub fn quasifree_moment(c: &CorrelationMatrix) -> Result<Complex64> {
    match c.stats {
        Statistics::Boson => permanent(c.m, &c.data),
        _ => Ok(determinant(c.m, &c.data)),
    }
}

/// Ryser's formula with Gray-code column updates.
pub fn permanent(m: usize, a: &[Complex64]) -> Result<Complex64> {
    if m > PERMANENT_CAP {
        return Err(QkinError::PermanentTooLarge(m));
    }
    if m == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let mut row_sums = vec![Complex64::new(0.0, 0.0); m];
    let mut total = Complex64::new(0.0, 0.0);
    let mut gray: u32 = 0;
    for step in 1u32..(1 << m) {
        let j = step.trailing_zeros() as usize;
        let bit = 1u32 << j;
        gray ^= bit;
        if gray & bit != 0 {
            for (i, s) in row_sums.iter_mut().enumerate() {
                *s += a[i * m + j];
            }
        } else {
            for (i, s) in row_sums.iter_mut().enumerate() {
                *s -= a[i * m + j];
            }
        }
        let prod: Complex64 = row_sums.iter().product();
        if gray.count_ones().is_multiple_of(2) {
            total += prod;
        } else {
            total -= prod;
        }
    }
    if m % 2 == 1 {
        total = -total;
    }
    Ok(total)
}

/// LU with partial pivoting.
pub fn determinant(m: usize, a: &[Complex64]) -> Complex64 {
    let mut lu = a.to_vec();
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| lu[x * m + col].norm().total_cmp(&lu[y * m + col].norm()))
            .unwrap();
        let p = lu[pivot * m + col];
        if p.norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if pivot != col {
            for c in 0..m {
                lu.swap(pivot * m + c, col * m + c);
            }
            det = -det;
        }
        det *= p;
        for r in col + 1..m {
            let f = lu[r * m + col] / p;
            if f.norm() == 0.0 {
                continue;
            }
            for c in col..m {
                let v = lu[col * m + c];
                lu[r * m + c] -= f * v;
            }
        }
    }
    det
}

/// Occupation `1 / (e^x - theta)` evaluated without overflow.
#[inline]
pub fn occupation(x: f64, stats: Statistics) -> f64 {
    match stats {
        Statistics::Fermion => {
            if x > 0.0 {
                let e = (-x).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + x.exp())
            }
        }
        Statistics::Boson => 1.0 / x.exp_m1(),
        Statistics::Boltzmann => (-x).exp(),
    }
}

pub fn thermal_distribution(
    model: &DispersionModel,
    grid: Arc<MomentumGrid>,
    temperature: f64,
    mu: f64,
    stats: Statistics,
) -> Result<Distribution> {
    let drift = vec![0.0; grid.dim()];
    thermal_distribution_drifting(model, grid, temperature, mu, &drift, stats)
}

/// Galilean-boosted equilibrium `1 / (e^{(omega(k - u) - mu)/T} - theta)`.
pub fn thermal_distribution_drifting(
    model: &DispersionModel,
    grid: Arc<MomentumGrid>,
    temperature: f64,
    mu: f64,
    drift: &[f64],
    stats: Statistics,
) -> Result<Distribution> {
    if !(temperature > 0.0 && temperature.is_finite()) || !mu.is_finite() {
        return Err(QkinError::InvalidParameter(format!(
            "need T > 0 and finite mu (got T = {temperature}, mu = {mu})"
        )));
    }
    if model.dim() != grid.dim() || drift.len() != grid.dim() {
        return Err(QkinError::GridMismatch("model, grid and drift dimensions differ".into()));
    }
    let band_min = model.band_range().0;
    if stats == Statistics::Boson && mu >= band_min {
        return Err(QkinError::Condensation { mu, band_min });
    }
    let mut shifted = vec![0.0; grid.dim()];
    Distribution::from_fn(grid, stats, |k| {
        for (s, (x, u)) in shifted.iter_mut().zip(k.iter().zip(drift)) {
            *s = x - u;
        }
        occupation((model.omega_unchecked(&shifted) - mu) / temperature, stats)
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThermalFit {
    pub temperature: f64,
    pub mu: f64,
    pub drift: Vec<f64>,
    pub residual: f64,
}

/// Finds the equilibrium with the given grid moments by damped Newton in
/// `(ln T, mu, u)`. With `with_drift = false` the drift is fixed at zero and
/// only mass and energy are matched.
pub fn fit_thermal(
    model: &DispersionModel,
    grid: Arc<MomentumGrid>,
    stats: Statistics,
    target: &Moments,
    with_drift: bool,
) -> Result<ThermalFit> {
    let d = grid.dim();
    let nvar = if with_drift { 2 + d } else { 2 };
    let scale: Vec<f64> = {
        let mut s = vec![target.mass.abs().max(1e-300), target.energy.abs().max(1e-300)];
        if with_drift {
            s.extend(std::iter::repeat_n(target.mass.abs().max(1e-300), d));
        }
        s
    };
    let residual = |p: &[f64]| -> Result<Vec<f64>> {
        let drift: Vec<f64> = if with_drift { p[2..].to_vec() } else { vec![0.0; d] };
        let mu = p[1];
        if stats == Statistics::Boson && mu >= model.band_range().0 {
            return Err(QkinError::Condensation {
                mu,
                band_min: model.band_range().0,
            });
        }
        let w = thermal_distribution_drifting(model, grid.clone(), p[0].exp(), mu, &drift, stats)?;
        let mo = moments_of(&grid, model, w.values())?;
        let mut r = vec![
            (mo.mass - target.mass) / scale[0],
            (mo.energy - target.energy) / scale[1],
        ];
        if with_drift {
            for a in 0..d {
                r.push((mo.momentum[a] - target.momentum[a]) / scale[2 + a]);
            }
        }
        Ok(r)
    };
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mass = target.mass.max(1e-300);
    let mean_energy = target.energy / mass;
    let mut p = vec![mean_energy.max(1e-3).ln(), model.band_range().0 - 1.0];
    if stats == Statistics::Fermion {
        p[1] = mean_energy;
    }
    if with_drift {
        p.extend(target.momentum.iter().map(|m| m / mass));
    }
    debug_assert_eq!(p.len(), nvar);
    let mut r = residual(&p)?;
    for _ in 0..200 {
        let rn = norm(&r);
        if rn < 1e-13 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(nvar, nvar);
        for v in 0..nvar {
            let h = 1e-6 * (1.0 + p[v].abs());
            let mut q = p.clone();
            q[v] += h;
            let (rq, sign) = match residual(&q) {
                Ok(rq) => (rq, 1.0),
                Err(_) => {
                    q[v] = p[v] - h;
                    (residual(&q)?, -1.0)
                }
            };
            for e in 0..nvar {
                jac[(e, v)] = sign * (rq[e] - r[e]) / h;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(nvar, r.iter().map(|x| -x));
        let step = jac
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| QkinError::Numerical("singular Jacobian in thermal fit".into()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a + lambda * s).collect();
            if let Ok(rq) = residual(&q) {
                if norm(&rq) < rn {
                    p = q;
                    r = rq;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let res = norm(&r);
    if !res.is_finite() || res > 1e-8 {
        return Err(QkinError::Numerical(format!(
            "thermal fit did not converge (relative residual {res:e})"
        )));
    }
    Ok(ThermalFit {
        temperature: p[0].exp(),
        mu: p[1],
        drift: if with_drift { p[2..].to_vec() } else { vec![0.0; d] },
        residual: res,
    })
}
