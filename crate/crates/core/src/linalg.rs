//! Dense and Krylov helpers for symmetric operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Extreme eigenvalues `(min, max)` of a symmetric operator restricted to the
/// orthogonal complement of `deflate` (Euclidean inner product), by Lanczos
/// with full reorthogonalization.
pub fn lanczos_extremes(
    n: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    steps: usize,
    deflate: &[Vec<f64>],
    seed: u64,
) -> (f64, f64) {
    let basis_defl = orthonormalize(deflate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    project_out(&mut q, &basis_defl);
    normalize(&mut q);
    let steps = steps.min(n.saturating_sub(basis_defl.len())).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut w = apply(&q);
        project_out(&mut w, &basis_defl);
        let a = dot(&w, &q);
        alpha.push(a);
        basis.push(q.clone());
        for _ in 0..2 {
            project_out(&mut w, &basis);
        }
        let b = norm(&w);
        if b < 1e-12 * a.abs().max(1.0) {
            break;
        }
        beta.push(b);
        q = w.iter().map(|x| x / b).collect();
    }
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let ev = SymmetricEigen::new(t).eigenvalues;
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Modified Gram-Schmidt, applied twice; drops numerically dependent vectors.
pub(crate) fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        let n0 = norm(&u);
        if n0 == 0.0 {
            continue;
        }
        project_out(&mut u, &out);
        project_out(&mut u, &out);
        let n1 = norm(&u);
        if n1 > 1e-10 * n0 {
            u.iter_mut().for_each(|x| *x /= n1);
            out.push(u);
        }
    }
    out
}

/// Spectral decomposition of a symmetric matrix, for exact exponentials.
#[derive(Clone, Debug)]
pub struct SymmetricSpectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricSpectrum {
    pub fn new(a: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(a);
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `exp(t A)` as a dense matrix.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, lam) in self.values.iter().enumerate() {
            let f = (lam * t).exp();
            scaled.column_mut(j).scale_mut(f);
        }
        &scaled * self.vectors.transpose()
    }

    /// Eigenvalues in ascending order.
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanczos_on_diagonal() {
        let d: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ones = vec![vec![1.0; 50]];
        let (lo, hi) = lanczos_extremes(50, |v| v.iter().zip(&d).map(|(a, b)| a * b).collect(), 50, &[], 1);
        assert!(lo.abs() < 1e-9 && (hi - 49.0).abs() < 1e-9);
        let (lo2, _) = lanczos_extremes(50, |v| v.iter().zip(&d).map(|(a, b)| a * b).collect(), 50, &ones, 1);
        assert!(lo2 > 0.0);
    }

    #[test]
    fn exponential_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let e = SymmetricSpectrum::new(a).exp(0.5);
        assert!((e[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(e[(0, 1)].abs() < 1e-15);
    }
}
