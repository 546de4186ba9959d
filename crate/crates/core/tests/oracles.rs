use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use qkin::collision_linear::{CollisionMatrix, PotentialSpectrum, StoragePolicy};
use qkin::collision_uu::{mc_oracle, PairPotential};
use qkin::quasifree::{quasifree_moment, CorrelationMatrix};
use qkin::{propagator_decay, Distribution, DispersionModel, MomentumGrid, Statistics};

/// Direct double loop `sum_j 2 pi w_j thetahat(k_i - k_j) delta_eta(omega_i - omega_j) (W_j - W_i)`.
fn brute_force(grid: &MomentumGrid, model: &DispersionModel, amp: f64, width: Option<f64>, eta: f64, w: &[f64]) -> Vec<f64> {
    let omega: Vec<f64> = (0..grid.len()).map(|i| model.omega(grid.node(i)).unwrap()).collect();
    let wt = grid.uniform_weight();
    (0..grid.len())
        .map(|i| {
            (0..grid.len())
                .map(|j| {
                    let q2: f64 = grid
                        .node(i)
                        .iter()
                        .zip(grid.node(j))
                        .map(|(a, b)| {
                            let d = (a - b + PI).rem_euclid(2.0 * PI) - PI;
                            d * d
                        })
                        .sum();
                    let z = (omega[i] - omega[j]) / eta;
                    let delta = (-0.5 * z * z).exp() / (eta * (2.0 * PI).sqrt());
                    let theta = width.map_or(amp, |s| amp * (-0.5 * q2 / (s * s)).exp());
                    2.0 * PI * wt * theta * delta * (w[j] - w[i])
                })
                .sum()
        })
        .collect()
}

#[test]
fn linear_apply_matches_the_double_loop() {
    let grid = Arc::new(MomentumGrid::torus(3, 8).unwrap());
    let model = DispersionModel::lattice(3).unwrap();
    let w = Distribution::from_fn(grid.clone(), Statistics::Boltzmann, |k| 1.0 + 0.5 * k[0].cos()).unwrap();
    for (amp, width, policy) in [
        (1.0, None, StoragePolicy::Auto),
        (1.0, None, StoragePolicy::Dense),
        (1.5, Some(1.0), StoragePolicy::Dense),
    ] {
        let spectrum = match width {
            None => PotentialSpectrum::Constant(amp),
            Some(width) => PotentialSpectrum::Gaussian { amplitude: amp, width },
        };
        let m = CollisionMatrix::build_with(grid.clone(), &model, spectrum, 0.4, policy).unwrap();
        let got = m.apply(&w).unwrap();
        let want = brute_force(&grid, &model, amp, width, 0.4, w.values());
        let scale = want.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * scale, "{policy:?}: {a} vs {b}");
        }
    }
}

/// `sum_s sign(s) prod_i C[i, s(i)]` with the sign read off from the
/// operator string `a*_1 .. a*_m a_m .. a_1`.
fn wick(m: usize, c: &[Complex64], fermion: bool) -> Complex64 {
    let mut perms = vec![vec![]];
    for n in 0..m {
        perms = perms
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..=n).map(move |pos| {
                    let mut q = p.clone();
                    q.insert(pos, n);
                    q
                })
            })
            .collect();
    }
    perms
        .iter()
        .map(|p| {
            let order: Vec<usize> = (0..m).flat_map(|i| [i, 2 * m - 1 - p[i]]).collect();
            let inv = (0..order.len())
                .flat_map(|a| (a + 1..order.len()).map(move |b| (a, b)))
                .filter(|&(a, b)| order[a] > order[b])
                .count();
            let sign = if fermion && inv % 2 == 1 { -1.0 } else { 1.0 };
            sign * (0..m).map(|i| c[i * m + p[i]]).product::<Complex64>()
        })
        .sum()
}

#[test]
fn quasifree_moments_match_wick_pairings() {
    let c3 = vec![
        Complex64::new(0.5, 0.0),
        Complex64::new(0.1, 0.2),
        Complex64::new(-0.05, 0.0),
        Complex64::new(0.1, -0.2),
        Complex64::new(0.4, 0.0),
        Complex64::new(0.0, 0.1),
        Complex64::new(-0.05, 0.0),
        Complex64::new(0.0, -0.1),
        Complex64::new(0.3, 0.0),
    ];
    for stats in [Statistics::Fermion, Statistics::Boson] {
        for m in 1..=3 {
            let c: Vec<Complex64> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| c3[i * 3 + j]).collect();
            let got = quasifree_moment(&CorrelationMatrix::new(m, c.clone(), stats).unwrap()).unwrap();
            let want = wick(m, &c, stats == Statistics::Fermion);
            assert!((got - want).norm() <= 1e-15, "{stats:?} m = {m}: {got} vs {want}");
        }
    }
}

#[test]
fn monte_carlo_collision_integral_vanishes_on_a_maxwellian() {
    let maxwell = |k: &[f64]| 0.4 * (-0.5 * k.iter().map(|x| x * x).sum::<f64>()).exp();
    let pot = PairPotential::Gaussian { amplitude: 1.0, width: 1.0 };
    let est = mc_oracle(&maxwell, &pot, Statistics::Boltzmann, &[0.5, -0.3, 0.2], 6.0, 20_000, 3).unwrap();
    assert!(est.mean.abs() <= 1e-12, "{est:?}");
}

#[test]
fn decay_exponents_follow_half_the_dimension() {
    for d in 1..=2 {
        let rep = propagator_decay(&DispersionModel::lattice(d).unwrap(), 200.0, 801).unwrap();
        assert!((rep.exponent - 0.5 * d as f64).abs() <= 0.1, "d = {d}: {}", rep.exponent);
        assert!(!rep.fit_unreliable);
    }
}
