//! Momentum and spatial grids, distributions on them, energy-shell weights
//! and the moment functionals.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dispersion::DispersionModel;
use crate::error::{check_len, QkinError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    TorusUniform,
    BoxUniform,
}

/// Regular product grid on `[-pi, pi)^d` (normalized measure) or on the
/// cell-centred box `[-K, K]^d`. Nodes are stored row-major with the last
/// axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumGrid {
    kind: GridKind,
    dim: usize,
    n: usize,
    half_width: f64,
    spacing: f64,
    axis: Vec<f64>,
    nodes: Vec<f64>,
    weight: f64,
}

impl MomentumGrid {
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Self::build(GridKind::TorusUniform, dim, n, PI)
    }

    /// Cell-centred grid on `[-K, K]^d` with weights `h^d`.
    pub fn boxed(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(QkinError::InvalidParameter(format!(
                "box half-width must be positive, got {half_width}"
            )));
        }
        Self::build(GridKind::BoxUniform, dim, n, half_width)
    }

    fn build(kind: GridKind, dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(QkinError::InvalidParameter(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if n < 2 {
            return Err(QkinError::InvalidParameter(format!(
                "need at least 2 points per axis, got {n}"
            )));
        }
        let spacing = 2.0 * half_width / n as f64;
        let axis: Vec<f64> = match kind {
            // integer numerators keep k and -k exact mirrors of each other
            GridKind::TorusUniform => (0..n)
                .map(|j| {
                    if j == 0 {
                        -PI
                    } else {
                        (2 * j as i64 - n as i64) as f64 * PI / n as f64
                    }
                })
                .collect(),
            GridKind::BoxUniform => (0..n)
                .map(|j| (2 * j as i64 + 1 - n as i64) as f64 * half_width / n as f64)
                .collect(),
        };
        let total = n.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total * dim);
        for i in 0..total {
            let mut rem = i;
            let start = nodes.len();
            nodes.resize(start + dim, 0.0);
            for a in (0..dim).rev() {
                nodes[start + a] = axis[rem % n];
                rem /= n;
            }
        }
        let weight = match kind {
            GridKind::TorusUniform => 1.0 / total as f64,
            GridKind::BoxUniform => spacing.powi(dim as i32),
        };
        Ok(Self {
            kind,
            dim,
            n,
            half_width,
            spacing,
            axis,
            nodes,
            weight,
        })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weight(&self, _i: usize) -> f64 {
        self.weight
    }

    /// The common weight; all grids here are uniform.
    pub fn uniform_weight(&self) -> f64 {
        self.weight
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![self.weight; self.len()]
    }

    pub fn total_measure(&self) -> f64 {
        match self.kind {
            GridKind::TorusUniform => 1.0,
            GridKind::BoxUniform => (2.0 * self.half_width).powi(self.dim as i32),
        }
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == GridKind::TorusUniform
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &j| acc * self.n + j)
    }

    pub fn multi_index(&self, mut i: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = i % self.n;
            i /= self.n;
        }
        out
    }

    /// Index of the node at `-k` (on the torus, `-(-pi)` wraps onto itself).
    pub fn neg_index(&self, i: usize) -> usize {
        let m = self.multi_index(i);
        let mut out = 0;
        for &j in &m[..self.dim] {
            let r = match self.kind {
                GridKind::TorusUniform => (self.n - j) % self.n,
                GridKind::BoxUniform => self.n - 1 - j,
            };
            out = out * self.n + r;
        }
        out
    }

    /// Momentum coordinate used in moment functionals. On the torus the
    /// `-pi` face is self-mirrored and is assigned 0.
    pub fn moment_coordinate(&self, i: usize, a: usize) -> f64 {
        let x = self.nodes[i * self.dim + a];
        if self.kind == GridKind::TorusUniform && x == -PI {
            0.0
        } else {
            x
        }
    }

    pub fn compatible(&self, other: &MomentumGrid) -> bool {
        self.kind == other.kind
            && self.dim == other.dim
            && self.n == other.n
            && self.half_width == other.half_width
    }

    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        check_len(self.len(), f.len())?;
        Ok(self.weight * f.iter().sum::<f64>())
    }

    pub fn omegas(&self, model: &DispersionModel) -> Result<Vec<f64>> {
        if model.dim() != self.dim {
            return Err(QkinError::GridMismatch(format!(
                "model dimension {} vs grid dimension {}",
                model.dim(),
                self.dim
            )));
        }
        Ok((0..self.len())
            .map(|i| model.omega_unchecked(self.node(i)))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Boson,
    Fermion,
    Boltzmann,
}

impl Statistics {
    pub fn theta(self) -> f64 {
        match self {
            Statistics::Boson => 1.0,
            Statistics::Fermion => -1.0,
            Statistics::Boltzmann => 0.0,
        }
    }

    pub fn from_theta(theta: i32) -> Result<Self> {
        match theta {
            1 => Ok(Statistics::Boson),
            -1 => Ok(Statistics::Fermion),
            0 => Ok(Statistics::Boltzmann),
            other => Err(QkinError::InvalidParameter(format!(
                "theta must be -1, 0 or 1, got {other}"
            ))),
        }
    }

    /// Admissibility of a single occupation value.
    pub fn admissible(self, w: f64) -> bool {
        w.is_finite() && w >= 0.0 && (self != Statistics::Fermion || w <= 1.0)
    }
}

pub(crate) fn first_inadmissible(stats: Statistics, values: &[f64]) -> Option<(usize, f64)> {
    values
        .iter()
        .position(|&w| !stats.admissible(w))
        .map(|i| (i, values[i]))
}

#[derive(Clone, Debug)]
pub struct Distribution {
    grid: Arc<MomentumGrid>,
    values: Vec<f64>,
    stats: Statistics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
}

impl Distribution {
    pub fn new(grid: Arc<MomentumGrid>, values: Vec<f64>, stats: Statistics) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        if let Some((i, w)) = first_inadmissible(stats, &values) {
            return Err(QkinError::Invariant(format!(
                "value {w} at node {i} is not admissible for {stats:?} statistics"
            )));
        }
        Ok(Self {
            grid,
            values,
            stats,
        })
    }

    pub fn from_fn(
        grid: Arc<MomentumGrid>,
        stats: Statistics,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, values, stats)
    }

    pub fn zeros(grid: Arc<MomentumGrid>, stats: Statistics) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
            stats,
        }
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn statistics(&self) -> Statistics {
        self.stats
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), values, self.stats)
    }

    pub fn mass(&self) -> f64 {
        self.grid.weight * self.values.iter().sum::<f64>()
    }

    pub fn moments(&self, model: &DispersionModel) -> Result<Moments> {
        moments_of(&self.grid, model, &self.values)
    }

    /// Average of `W(k)` and `W(-k)`.
    pub fn symmetrized(&self) -> Self {
        let values = (0..self.values.len())
            .map(|i| 0.5 * (self.values[i] + self.values[self.grid.neg_index(i)]))
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
            stats: self.stats,
        }
    }

    /// Quadrature L1 distance.
    pub fn l1_distance(&self, other: &Distribution) -> Result<f64> {
        if !self.grid.compatible(&other.grid) {
            return Err(QkinError::GridMismatch("distributions on different grids".into()));
        }
        Ok(self.grid.weight
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }
}

/// Mass, momentum and energy of arbitrary per-node values.
pub fn moments_of(grid: &MomentumGrid, model: &DispersionModel, f: &[f64]) -> Result<Moments> {
    check_len(grid.len(), f.len())?;
    let omegas = grid.omegas(model)?;
    let d = grid.dim();
    let w = grid.uniform_weight();
    let mut momentum = vec![0.0; d];
    let mut mass = 0.0;
    let mut energy = 0.0;
    for (i, &v) in f.iter().enumerate() {
        mass += v;
        energy += omegas[i] * v;
        for (a, p) in momentum.iter_mut().enumerate() {
            *p += grid.moment_coordinate(i, a) * v;
        }
    }
    Ok(Moments {
        mass: w * mass,
        momentum: momentum.into_iter().map(|p| w * p).collect(),
        energy: w * energy,
    })
}

/// Periodic spatial grid of `m^dim` cells over a box of side `side`. Spatial
/// axis `a` is transported by momentum component `axes[a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub m: usize,
    pub side: f64,
    pub axes: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(dim: usize, m: usize, side: f64) -> Result<Self> {
        Self::with_axes(m, side, (0..dim).collect())
    }

    pub fn with_axes(m: usize, side: f64, axes: Vec<usize>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 || m < 2 || !(side > 0.0) {
            return Err(QkinError::InvalidParameter(format!(
                "spatial grid needs 1..=3 axes, m >= 2 and side > 0 (got {} axes, m = {m}, side = {side})",
                axes.len()
            )));
        }
        Ok(Self { m, side, axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cells(&self) -> usize {
        self.m.pow(self.dim() as u32)
    }

    pub fn cell_size(&self) -> f64 {
        self.side / self.m as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size().powi(self.dim() as i32)
    }

    pub fn center(&self, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut rem = c;
        for a in (0..self.dim()).rev() {
            out[a] = (((rem % self.m) as f64) + 0.5) * self.cell_size();
            rem /= self.m;
        }
        out
    }
}

/// `W(r, k)` stored cell-major with the momentum index fastest.
#[derive(Clone, Debug)]
pub struct WignerField {
    spatial: SpatialGrid,
    grid: Arc<MomentumGrid>,
    values: Vec<f64>,
    stats: Statistics,
}

impl WignerField {
    pub fn new(
        spatial: SpatialGrid,
        grid: Arc<MomentumGrid>,
        values: Vec<f64>,
        stats: Statistics,
    ) -> Result<Self> {
        if spatial.axes.iter().any(|&a| a >= grid.dim()) {
            return Err(QkinError::GridMismatch(format!(
                "spatial axes {:?} exceed momentum dimension {}",
                spatial.axes,
                grid.dim()
            )));
        }
        check_len(spatial.cells() * grid.len(), values.len())?;
        if let Some((i, w)) = first_inadmissible(stats, &values) {
            return Err(QkinError::Invariant(format!(
                "value {w} at entry {i} is not admissible for {stats:?} statistics"
            )));
        }
        Ok(Self {
            spatial,
            grid,
            values,
            stats,
        })
    }

    /// Builds a field without the admissibility check, for quasi-densities
    /// such as Wigner functions of pure states.
    pub(crate) fn from_raw(
        spatial: SpatialGrid,
        grid: Arc<MomentumGrid>,
        values: Vec<f64>,
        stats: Statistics,
    ) -> Self {
        debug_assert_eq!(spatial.cells() * grid.len(), values.len());
        Self {
            spatial,
            grid,
            values,
            stats,
        }
    }

    /// Field with every cell equal to `w`.
    pub fn uniform(spatial: SpatialGrid, w: &Distribution) -> Result<Self> {
        let mut values = Vec::with_capacity(spatial.cells() * w.values.len());
        for _ in 0..spatial.cells() {
            values.extend_from_slice(&w.values);
        }
        Self::new(spatial, w.grid.clone(), values, w.stats)
    }

    pub fn from_fn(
        spatial: SpatialGrid,
        grid: Arc<MomentumGrid>,
        stats: Statistics,
        mut f: impl FnMut(&[f64], &[f64]) -> f64,
    ) -> Result<Self> {
        let nk = grid.len();
        let mut values = Vec::with_capacity(spatial.cells() * nk);
        for c in 0..spatial.cells() {
            let r = spatial.center(c);
            for i in 0..nk {
                values.push(f(&r, grid.node(i)));
            }
        }
        Self::new(spatial, grid, values, stats)
    }

    pub fn spatial(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn statistics(&self) -> Statistics {
        self.stats
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let nk = self.grid.len();
        &self.values[c * nk..(c + 1) * nk]
    }

    pub fn cell_distribution(&self, c: usize) -> Distribution {
        Distribution {
            grid: self.grid.clone(),
            values: self.cell(c).to_vec(),
            stats: self.stats,
        }
    }

    /// `int dr int dk W` with the cell volume as spatial weight.
    pub fn total_mass(&self) -> f64 {
        self.spatial.cell_volume() * self.grid.weight * self.values.iter().sum::<f64>()
    }

    /// Spatial density `rho(r) = int dk W(r, k)` per cell.
    pub fn density(&self) -> Vec<f64> {
        let nk = self.grid.len();
        self.values
            .chunks(nk)
            .map(|c| self.grid.weight * c.iter().sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ShellWeights {
    pub energy: f64,
    pub eta: f64,
    pub weights: Vec<f64>,
}

impl ShellWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Unit-mass Gaussian of standard deviation `eta`.
#[inline]
pub fn smeared_delta(x: f64, eta: f64) -> f64 {
    let z = x / eta;
    (-0.5 * z * z).exp() / (eta * (2.0 * PI).sqrt())
}

pub fn energy_shell(
    grid: &MomentumGrid,
    model: &DispersionModel,
    energy: f64,
    eta: f64,
) -> Result<ShellWeights> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(QkinError::InvalidParameter(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let omegas = grid.omegas(model)?;
    let w = grid.uniform_weight();
    let weights: Vec<f64> = omegas
        .iter()
        .map(|om| w * smeared_delta(om - energy, eta))
        .collect();
    let (lo, hi) = model.band_range();
    if energy < lo - 6.0 * eta || energy > hi + 6.0 * eta || weights.iter().all(|&s| s < 1e-30) {
        return Err(QkinError::EmptyShell { energy, eta });
    }
    Ok(ShellWeights {
        energy,
        eta,
        weights,
    })
}

/// Median over shell nodes of the largest single-axis energy step to a
/// neighbouring node.
pub fn median_energy_spacing(
    grid: &MomentumGrid,
    model: &DispersionModel,
    energy: f64,
) -> Result<f64> {
    let omegas = grid.omegas(model)?;
    let d = grid.dim();
    let n = grid.n();
    let steps: Vec<f64> = (0..grid.len())
        .map(|i| {
            let idx = grid.multi_index(i);
            let mut best: f64 = 0.0;
            for a in 0..d {
                let mut nb = idx;
                nb[a] = if grid.is_periodic() {
                    (idx[a] + 1) % n
                } else if idx[a] + 1 < n {
                    idx[a] + 1
                } else {
                    idx[a] - 1
                };
                let j = grid.flat_index(&nb[..d]);
                best = best.max((omegas[j] - omegas[i]).abs());
            }
            best
        })
        .collect();
    let max_step = steps.iter().cloned().fold(0.0, f64::max);
    let mut shell: Vec<f64> = omegas
        .iter()
        .zip(&steps)
        .filter(|(om, _)| (**om - energy).abs() <= max_step)
        .map(|(_, s)| *s)
        .collect();
    if shell.is_empty() {
        return Err(QkinError::EmptyShell {
            energy,
            eta: max_step,
        });
    }
    shell.sort_by(|a, b| a.total_cmp(b));
    Ok(shell[shell.len() / 2])
}

/// Default smearing width: twice the median energy spacing on the shell.
pub fn auto_eta(grid: &MomentumGrid, model: &DispersionModel, energy: f64) -> Result<f64> {
    Ok(2.0 * median_energy_spacing(grid, model, energy)?)
}
