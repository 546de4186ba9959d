use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized `d`-dimensional FFT on the `L^d` torus by axis passes.
///
/// Grid node `j` (momentum `-pi + 2 pi j / L`) sits at FFT index
/// `(j + L/2) mod L` on every axis.
pub struct LatticeFft {
    dim: usize,
    side: usize,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
    omega: Vec<f64>,
}

impl LatticeFft {
    pub fn new(dim: usize, side: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(side);
        let inverse = planner.plan_fft_inverse(side);
        let len = side.pow(dim as u32);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let cos: Vec<f64> = (0..side)
            .map(|m| 1.0 - (2.0 * std::f64::consts::PI * m as f64 / side as f64).cos())
            .collect();
        let omega = (0..len)
            .map(|i| {
                let mut rem = i;
                let mut s = 0.0;
                for _ in 0..dim {
                    s += cos[rem % side];
                    rem /= side;
                }
                s
            })
            .collect();
        Self {
            dim,
            side,
            len,
            forward,
            inverse,
            lines: vec![Complex64::new(0.0, 0.0); len],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            omega,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `sum_x e^{-2 pi i m x / L} a(x)`
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let f = self.forward.clone();
        self.transform(data, f.as_ref());
    }

    /// `sum_m e^{+2 pi i m x / L} a(m)`, without the `1/N` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let f = self.inverse.clone();
        self.transform(data, f.as_ref());
    }

    fn transform(&mut self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.len);
        let l = self.side;
        for axis in 0..self.dim {
            let stride = l.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            let n_lines = self.len / l;
            for line in 0..n_lines {
                let base = (line / stride) * stride * l + line % stride;
                for j in 0..l {
                    self.lines[line * l + j] = data[base + j * stride];
                }
            }
            fft.process_with_scratch(&mut self.lines, &mut self.scratch);
            for line in 0..n_lines {
                let base = (line / stride) * stride * l + line % stride;
                for j in 0..l {
                    data[base + j * stride] = self.lines[line * l + j];
                }
            }
        }
    }

    /// `omega(k) = sum_a (1 - cos k_a)` at FFT index `m`.
    pub fn omega_fft(&self, m: usize) -> f64 {
        self.omega[m]
    }

    fn shift(&self, i: usize) -> usize {
        let l = self.side;
        let mut rem = i;
        let mut out = 0;
        let mut scale = 1;
        for _ in 0..self.dim {
            let j = rem % l;
            out += ((j + l / 2) % l) * scale;
            rem /= l;
            scale *= l;
        }
        out
    }

    pub fn fft_index_of_grid(&self, i: usize) -> usize {
        self.shift(i)
    }

    /// Inverse of [`Self::fft_index_of_grid`]; the half-period shift is its
    /// own inverse for even `L`.
    pub fn grid_index_of_fft(&self, m: usize) -> usize {
        self.shift(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn forward_matches_direct_sum() {
        let (d, l) = (2, 6);
        let mut f = LatticeFft::new(d, l);
        let data: Vec<Complex64> = (0..36)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut out = data.clone();
        f.forward(&mut out);
        for m in 0..36 {
            let (m0, m1) = (m / l, m % l);
            let mut s = Complex64::new(0.0, 0.0);
            for x in 0..36 {
                let (x0, x1) = (x / l, x % l);
                let ph = -2.0 * PI * ((m0 * x0 + m1 * x1) as f64) / l as f64;
                s += data[x] * Complex64::from_polar(1.0, ph);
            }
            assert!((s - out[m]).norm() < 1e-12);
        }
        f.inverse(&mut out);
        for (a, b) in out.iter().zip(&data) {
            assert!((a / 36.0 - b).norm() < 1e-13);
        }
    }

    #[test]
    fn index_shift_maps_nodes_to_frequencies() {
        let f = LatticeFft::new(3, 8);
        let g = crate::grids::MomentumGrid::torus(3, 8).unwrap();
        for i in 0..g.len() {
            let m = f.fft_index_of_grid(i);
            assert_eq!(f.grid_index_of_fft(m), i);
            let om: f64 = g.node(i).iter().map(|k| 1.0 - k.cos()).sum();
            assert!((f.omega_fft(m) - om).abs() < 1e-13);
        }
    }
}
