use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CollisionOperator, LinearPropagator, SolverConfig, Splitting, Stepper};
use crate::dispersion::DispersionModel;
use crate::error::{QkinError, Result};
use crate::grids::WignerField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightScheme {
    /// Tensor-product linear interpolation; positivity preserving.
    #[default]
    Linear,
    /// Four-point Lagrange interpolation per axis; transports the first three
    /// spatial moments exactly but may undershoot.
    Cubic,
}

/// Semi-Lagrangian update `W(r, k) <- W(r - v(k) dt, k)` on the periodic box.
pub fn free_flight(
    f: &WignerField,
    model: &DispersionModel,
    dt: f64,
    scheme: FlightScheme,
) -> Result<WignerField> {
    let mut out = f.clone();
    flight_in_place(&mut out, model, dt, scheme)?;
    Ok(out)
}

pub(crate) fn flight_in_place(
    f: &mut WignerField,
    model: &DispersionModel,
    dt: f64,
    scheme: FlightScheme,
) -> Result<()> {
    if !(dt >= 0.0) {
        return Err(QkinError::InvalidParameter(format!("dt must be >= 0, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let grid = f.grid().clone();
    if model.dim() != grid.dim() {
        return Err(QkinError::GridMismatch("model and momentum grid dimensions differ".into()));
    }
    let sp = f.spatial().clone();
    let nk = grid.len();
    let cells = sp.cells();
    let h = sp.cell_size();
    let mut shifts = Vec::with_capacity(nk);
    let mut v = vec![0.0; grid.dim()];
    for i in 0..nk {
        model.velocity_into(grid.node(i), &mut v)?;
        shifts.push(sp.axes.iter().map(|&a| v[a] * dt / h).collect::<Vec<f64>>());
    }
    let values = f.values().to_vec();
    let columns: Vec<Vec<f64>> = (0..nk)
        .into_par_iter()
        .map(|i| {
            let mut col: Vec<f64> = (0..cells).map(|c| values[c * nk + i]).collect();
            let before: f64 = col.iter().sum();
            let mut tmp = vec![0.0; cells];
            for (axis, &s) in shifts[i].iter().enumerate() {
                if s != 0.0 {
                    shift_axis(&col, &mut tmp, sp.m, sp.dim(), axis, s, scheme);
                    std::mem::swap(&mut col, &mut tmp);
                }
            }
            let after: f64 = col.iter().sum();
            if before != 0.0 && after != 0.0 {
                let r = before / after;
                col.iter_mut().for_each(|x| *x *= r);
            }
            col
        })
        .collect();
    let data = f.values_mut();
    for (i, col) in columns.iter().enumerate() {
        for (c, x) in col.iter().enumerate() {
            data[c * nk + i] = *x;
        }
    }
    Ok(())
}

/// `dst(j) = src(j - s)` along one axis of an `m^dims` periodic array.
fn shift_axis(src: &[f64], dst: &mut [f64], m: usize, dims: usize, axis: usize, s: f64, scheme: FlightScheme) {
    let stride = m.pow((dims - 1 - axis) as u32);
    let base = s.floor();
    let frac = s - base;
    let shift = base as i64;
    let weights: Vec<(i64, f64)> = match scheme {
        // value at j - s = (j - shift - 1) + (1 - frac)
        FlightScheme::Linear => vec![(-shift, 1.0 - frac), (-shift - 1, frac)],
        FlightScheme::Cubic => {
            let x = 1.0 - frac;
            let w = lagrange4(x);
            vec![
                (-shift - 2, w[0]),
                (-shift - 1, w[1]),
                (-shift, w[2]),
                (-shift + 1, w[3]),
            ]
        }
    };
    let mi = m as i64;
    for (idx, out) in dst.iter_mut().enumerate() {
        let j = ((idx / stride) % m) as i64;
        let rest = idx - (j as usize) * stride;
        *out = weights
            .iter()
            .map(|&(off, w)| {
                let jj = (j + off).rem_euclid(mi) as usize;
                w * src[rest + jj * stride]
            })
            .sum();
    }
}

/// Lagrange weights for nodes -1, 0, 1, 2 evaluated at `x` in `[0, 1]`.
fn lagrange4(x: f64) -> [f64; 4] {
    [
        -x * (x - 1.0) * (x - 2.0) / 6.0,
        (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0,
        -(x + 1.0) * x * (x - 2.0) / 2.0,
        (x + 1.0) * x * (x - 1.0) / 6.0,
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InhomogeneousTrajectory {
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    pub mass_drift: f64,
    pub steps: usize,
}

/// Operator splitting of free flight and the cell-local collision term with
/// fixed step `cfg.dt`; `observe` is called at `t = 0` and at every snapshot.
pub fn solve_inhomogeneous<C: CollisionOperator + ?Sized>(
    f0: &WignerField,
    op: &C,
    model: &DispersionModel,
    cfg: &SolverConfig,
    scheme: FlightScheme,
    observe: &mut dyn FnMut(f64, &WignerField),
) -> Result<(WignerField, InhomogeneousTrajectory)> {
    cfg.validate()?;
    let nk = f0.grid().len();
    if op.len() != nk {
        return Err(QkinError::LengthMismatch {
            expected: op.len(),
            got: nk,
        });
    }
    let mut f = f0.clone();
    let m0 = f.total_mass();
    let mut times = vec![0.0];
    let mut masses = vec![m0];
    let mut drift: f64 = 0.0;
    let mut steps = 0;
    let mut propagators: HashMap<u64, LinearPropagator> = HashMap::new();
    observe(0.0, &f);
    let snaps = cfg.snapshot_times();
    for w in snaps.windows(2) {
        let interval = w[1] - w[0];
        let n = (interval / cfg.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = interval / n as f64;
        for _ in 0..n {
            match cfg.splitting {
                Splitting::Strang => {
                    flight_in_place(&mut f, model, 0.5 * h, scheme)?;
                    collide(&mut f, op, h, cfg, &mut propagators)?;
                    flight_in_place(&mut f, model, 0.5 * h, scheme)?;
                }
                Splitting::Lie => {
                    flight_in_place(&mut f, model, h, scheme)?;
                    collide(&mut f, op, h, cfg, &mut propagators)?;
                }
            }
            steps += 1;
        }
        let m = f.total_mass();
        drift = drift.max((m - m0).abs());
        times.push(w[1]);
        masses.push(m);
        observe(w[1], &f);
    }
    Ok((
        f,
        InhomogeneousTrajectory {
            times,
            masses,
            mass_drift: drift,
            steps,
        },
    ))
}

fn collide<C: CollisionOperator + ?Sized>(
    f: &mut WignerField,
    op: &C,
    h: f64,
    cfg: &SolverConfig,
    cache: &mut HashMap<u64, LinearPropagator>,
) -> Result<()> {
    let nk = f.grid().len();
    let key = h.to_bits();
    if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
        if let Some(p) = op.linear_propagator(h) {
            e.insert(p?);
        }
    }
    if let Some(p) = cache.get(&key) {
        p.apply_cells(f.values_mut(), nk);
        return Ok(());
    }
    let results: Vec<Result<()>> = f
        .values_mut()
        .par_chunks_mut(nk)
        .map(|cell| {
            let mut y = cell.to_vec();
            let mut t = 0.0;
            let mut stepper = Stepper::new(op, cfg);
            stepper.dt = cfg.dt.min(h);
            stepper.advance(&mut y, &mut t, h, &mut |_, _, _| {})?;
            cell.copy_from_slice(&y);
            Ok(())
        })
        .collect();
    results.into_iter().collect()
}
