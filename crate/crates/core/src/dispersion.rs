//! Dispersion relations, group velocities and the free-propagator decay
//! diagnostic.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QkinError, Result};
use crate::stats::linear_fit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionKind {
    LatticeNn,
    ContinuumQuadratic,
    PhononAcoustic,
    PhononOptical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DispersionModel {
    kind: DispersionKind,
    dim: usize,
    gap: f64,
    box_half_width: Option<f64>,
}

impl DispersionModel {
    fn new(kind: DispersionKind, dim: usize, gap: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(QkinError::InvalidParameter(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        Ok(Self {
            kind,
            dim,
            gap,
            box_half_width: None,
        })
    }

    /// Nearest-neighbour hopping band `sum_j (1 - cos k_j)`.
    pub fn lattice(dim: usize) -> Result<Self> {
        Self::new(DispersionKind::LatticeNn, dim, 0.0)
    }

    pub fn continuum(dim: usize) -> Result<Self> {
        Self::new(DispersionKind::ContinuumQuadratic, dim, 0.0)
    }

    pub fn acoustic(dim: usize) -> Result<Self> {
        Self::new(DispersionKind::PhononAcoustic, dim, 0.0)
    }

    pub fn optical(dim: usize, gap: f64) -> Result<Self> {
        if !(gap > 0.0 && gap.is_finite()) {
            return Err(QkinError::InvalidParameter(format!(
                "optical gap must be positive, got {gap}"
            )));
        }
        Self::new(DispersionKind::PhononOptical, dim, gap)
    }

    pub fn from_kind(kind: DispersionKind, dim: usize, gap: f64) -> Result<Self> {
        match kind {
            DispersionKind::PhononOptical => Self::optical(dim, gap),
            other => Self::new(other, dim, 0.0),
        }
    }

    /// Declares a truncation box `[-K, K]^d`; only meaningful for the continuum.
    pub fn with_box(mut self, half_width: f64) -> Self {
        self.box_half_width = Some(half_width);
        self
    }

    pub fn kind(&self) -> DispersionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn box_half_width(&self) -> Option<f64> {
        self.box_half_width
    }

    pub fn is_periodic(&self) -> bool {
        self.kind != DispersionKind::ContinuumQuadratic
    }

    fn check(&self, k: &[f64]) -> Result<()> {
        if k.len() != self.dim {
            return Err(QkinError::LengthMismatch {
                expected: self.dim,
                got: k.len(),
            });
        }
        if self.kind == DispersionKind::ContinuumQuadratic {
            if let Some(half_width) = self.box_half_width {
                if k.iter().any(|x| x.abs() > half_width) {
                    return Err(QkinError::Domain {
                        k: k.to_vec(),
                        half_width,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn omega(&self, k: &[f64]) -> Result<f64> {
        self.check(k)?;
        Ok(self.omega_unchecked(k))
    }

    /// `omega` without domain checks, for inner loops over grid nodes.
    #[inline]
    pub fn omega_unchecked(&self, k: &[f64]) -> f64 {
        match self.kind {
            DispersionKind::LatticeNn => k.iter().map(|x| 1.0 - x.cos()).sum(),
            DispersionKind::ContinuumQuadratic => 0.5 * k.iter().map(|x| x * x).sum::<f64>(),
            DispersionKind::PhononAcoustic => phonon_sq(k).sqrt(),
            DispersionKind::PhononOptical => (self.gap * self.gap + phonon_sq(k)).sqrt(),
        }
    }

    pub fn group_velocity(&self, k: &[f64]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        self.velocity_into(k, &mut v)?;
        Ok(v)
    }

    pub fn velocity_into(&self, k: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(k)?;
        match self.kind {
            DispersionKind::LatticeNn => {
                for (o, x) in out.iter_mut().zip(k) {
                    *o = x.sin();
                }
            }
            DispersionKind::ContinuumQuadratic => out.copy_from_slice(k),
            DispersionKind::PhononAcoustic | DispersionKind::PhononOptical => {
                let w = self.omega_unchecked(k);
                if w == 0.0 {
                    return Err(QkinError::SingularGradient);
                }
                for (o, x) in out.iter_mut().zip(k) {
                    *o = x.sin() / w;
                }
            }
        }
        Ok(())
    }

    /// Closed band range `[min, max]` of the dispersion over its domain.
    pub fn band_range(&self) -> (f64, f64) {
        let d = self.dim as f64;
        match self.kind {
            DispersionKind::LatticeNn => (0.0, 2.0 * d),
            DispersionKind::ContinuumQuadratic => (
                0.0,
                self.box_half_width
                    .map_or(f64::INFINITY, |kk| 0.5 * d * kk * kk),
            ),
            DispersionKind::PhononAcoustic => (0.0, (4.0 * d).sqrt()),
            DispersionKind::PhononOptical => {
                (self.gap, (self.gap * self.gap + 4.0 * d).sqrt())
            }
        }
    }
}

fn phonon_sq(k: &[f64]) -> f64 {
    k.iter().map(|x| 2.0 * (1.0 - x.cos())).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub running_integral: Vec<f64>,
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub fit_window: (f64, f64),
    pub fit_unreliable: bool,
    pub nodes_per_axis: usize,
}

/// Largest `nodes^d * n_t` product accepted by the direct quadrature path.
const DIRECT_BUDGET: f64 = 4.0e9;

/// Samples `a(t) = |int dk exp(-i omega(k) t)|` on `n_t` equispaced times in
/// `[0, t_max]` and fits the power-law tail.
pub fn propagator_decay(model: &DispersionModel, t_max: f64, n_t: usize) -> Result<DecayReport> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(QkinError::InvalidParameter(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    if n_t < 2 {
        return Err(QkinError::InvalidParameter("n_t must be at least 2".into()));
    }
    let times: Vec<f64> = (0..n_t)
        .map(|i| t_max * i as f64 / (n_t - 1) as f64)
        .collect();
    let (amplitude, nodes) = match model.kind {
        DispersionKind::LatticeNn | DispersionKind::ContinuumQuadratic => {
            separable_amplitude(model, &times)?
        }
        _ => {
            let n = lattice_nodes(t_max);
            direct_amplitude(model, &times, n)?
        }
    };
    let running_integral = cumulative_trapezoid(&times, &amplitude);
    let (exponent, exponent_stderr, fit_window, fit_unreliable) = fit_tail(&times, &amplitude);
    Ok(DecayReport {
        times,
        amplitude,
        running_integral,
        exponent,
        exponent_stderr,
        fit_window,
        fit_unreliable,
        nodes_per_axis: nodes,
    })
}

fn lattice_nodes(t_max: f64) -> usize {
    let n = (2.0 * t_max).ceil() as usize + 64;
    n + n % 2
}

/// One-dimensional factor of a separable model, raised to the power d.
fn separable_amplitude(model: &DispersionModel, times: &[f64]) -> Result<(Vec<f64>, usize)> {
    let t_max = times.last().copied().unwrap_or(0.0);
    let one_d = match model.kind {
        DispersionKind::LatticeNn => {
            let n = lattice_nodes(t_max);
            let nodes: Vec<f64> = (0..n)
                .map(|j| -PI + 2.0 * PI * j as f64 / n as f64)
                .collect();
            let omegas: Vec<f64> = nodes.iter().map(|k| 1.0 - k.cos()).collect();
            (omegas, vec![1.0 / n as f64; n])
        }
        _ => {
            let half_width = model.box_half_width.unwrap_or(6.0);
            let n = ((4.0 * half_width * half_width * t_max / PI).ceil() as usize).max(64) + 64;
            let h = 2.0 * half_width / n as f64;
            let omegas = (0..n)
                .map(|j| {
                    let k = -half_width + (j as f64 + 0.5) * h;
                    0.5 * k * k
                })
                .collect();
            (omegas, vec![h / (2.0 * half_width); n])
        }
    };
    let (omegas, weights) = one_d;
    let n = omegas.len();
    let d = model.dim as i32;
    let amp = times
        .iter()
        .map(|&t| phase_sum(&omegas, &weights, t).norm().powi(d))
        .collect();
    Ok((amp, n))
}

fn phase_sum(omegas: &[f64], weights: &[f64], t: f64) -> Complex64 {
    omegas
        .iter()
        .zip(weights)
        .map(|(w, c)| Complex64::from_polar(*c, -w * t))
        .sum()
}

/// Direct d-dimensional trapezoid on the torus with `n` nodes per axis.
pub(crate) fn direct_amplitude(
    model: &DispersionModel,
    times: &[f64],
    n: usize,
) -> Result<(Vec<f64>, usize)> {
    let d = model.dim;
    let total = n.pow(d as u32);
    let cost = total as f64 * times.len() as f64;
    if cost > DIRECT_BUDGET {
        return Err(QkinError::BudgetExceeded {
            estimate: cost,
            budget: DIRECT_BUDGET,
        });
    }
    let axis: Vec<f64> = (0..n)
        .map(|j| -PI + 2.0 * PI * j as f64 / n as f64)
        .collect();
    let mut k = vec![0.0; d];
    let omegas: Vec<f64> = (0..total)
        .map(|mut idx| {
            for a in (0..d).rev() {
                k[a] = axis[idx % n];
                idx /= n;
            }
            model.omega_unchecked(&k)
        })
        .collect();
    let weights = vec![1.0 / total as f64; total];
    let amp = times
        .iter()
        .map(|&t| phase_sum(&omegas, &weights, t).norm())
        .collect();
    Ok((amp, n))
}

fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}

/// Fit of `log <a>` against `log t` on the last decade, where `<a>` is the
/// running mean over `[t - pi, t + pi]`.
fn fit_tail(times: &[f64], amp: &[f64]) -> (f64, f64, (f64, f64), bool) {
    let t_max = *times.last().unwrap();
    let dt = times[1] - times[0];
    let half = (PI / dt).round().max(1.0) as usize;
    let lo = (t_max / 10.0).max(1.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut prefix = vec![0.0; amp.len() + 1];
    for (i, a) in amp.iter().enumerate() {
        prefix[i + 1] = prefix[i] + a;
    }
    for i in half..amp.len().saturating_sub(half) {
        if times[i] < lo {
            continue;
        }
        let mean = (prefix[i + half + 1] - prefix[i - half]) / (2 * half + 1) as f64;
        if mean > 0.0 {
            xs.push(times[i].ln());
            ys.push(mean.ln());
        }
    }
    let window = (
        xs.first().map_or(lo, |x| x.exp()),
        xs.last().map_or(t_max, |x| x.exp()),
    );
    if xs.len() < 3 {
        return (f64::NAN, f64::NAN, window, true);
    }
    let fit = linear_fit(&xs, &ys);
    // the running-mean margin trims a little off the nominal decade
    let unreliable = window.1 / window.0 < 8.0 || t_max < 10.0;
    (-fit.slope, fit.slope_stderr, window, unreliable)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_band_values() {
        let m = DispersionModel::lattice(3).unwrap();
        assert_eq!(m.omega(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((m.omega(&[PI, PI, PI]).unwrap() - 6.0).abs() < 1e-15);
        let v = m.group_velocity(&[PI / 2.0, 0.0, 0.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1] == 0.0 && v[2] == 0.0);
    }

    #[test]
    fn continuum_values() {
        let m = DispersionModel::continuum(3).unwrap();
        assert_eq!(m.omega(&[1.0, 2.0, 2.0]).unwrap(), 4.5);
        assert_eq!(m.group_velocity(&[0.3, -1.0, 2.0]).unwrap(), vec![0.3, -1.0, 2.0]);
        let boxed = m.with_box(6.0);
        assert!(matches!(
            boxed.omega(&[7.0, 0.0, 0.0]),
            Err(QkinError::Domain { .. })
        ));
    }

    #[test]
    fn phonon_branches() {
        let ac = DispersionModel::acoustic(3).unwrap();
        assert!(matches!(
            ac.group_velocity(&[0.0; 3]),
            Err(QkinError::SingularGradient)
        ));
        let k = [1e-4, 0.0, 0.0];
        assert!((ac.omega(&k).unwrap() - 1e-4).abs() < 1e-12);
        let op = DispersionModel::optical(3, 0.5).unwrap();
        assert_eq!(op.group_velocity(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(op.omega(&[0.0; 3]).unwrap() >= 0.5);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let m = DispersionModel::lattice(2).unwrap();
        assert!(matches!(
            m.omega(&[0.0]),
            Err(QkinError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn decay_starts_at_one() {
        let m = DispersionModel::lattice(3).unwrap();
        let r = propagator_decay(&m, 20.0, 201).unwrap();
        assert!((r.amplitude[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.running_integral[0], 0.0);
    }

    #[test]
    fn short_window_is_flagged() {
        let m = DispersionModel::lattice(1).unwrap();
        let r = propagator_decay(&m, 5.0, 101).unwrap();
        assert!(r.fit_unreliable);
    }
}
