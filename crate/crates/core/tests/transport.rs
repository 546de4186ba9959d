use std::sync::Arc;

use qkin::collision_linear::{CollisionMatrix, PotentialSpectrum};
use qkin::collision_uu::{PairPotential, UuOperator};
use qkin::quasifree::{fit_thermal, thermal_distribution};
use qkin::transport::{
    free_flight, short_time_check, solve_homogeneous, solve_inhomogeneous, FlightScheme, SolverConfig, Splitting,
    ZeroCollision,
};
use qkin::{Distribution, DispersionModel, MomentumGrid, SpatialGrid, Statistics, WignerField};

fn lattice(d: usize, n: usize) -> (Arc<MomentumGrid>, DispersionModel) {
    (Arc::new(MomentumGrid::torus(d, n).unwrap()), DispersionModel::lattice(d).unwrap())
}

#[test]
fn uu_fermions_relax_to_the_matching_thermal_state() {
    let (grid, model) = lattice(3, 4);
    let stats = Statistics::Fermion;
    let cold = thermal_distribution(&model, grid.clone(), 0.5, 3.0, stats).unwrap();
    let hot = thermal_distribution(&model, grid.clone(), 3.0, 3.0, stats).unwrap();
    let mix: Vec<f64> = cold.values().iter().zip(hot.values()).map(|(a, b)| 0.5 * (a + b)).collect();
    let w0 = Distribution::new(grid.clone(), mix, stats).unwrap();
    // On 4^3 every lattice energy is an integer, so a narrow smearing keeps
    // energy exchange close to exact.
    let op = UuOperator::lattice(
        grid.clone(),
        &model,
        PairPotential::Gaussian { amplitude: 10.0, width: 2.0 },
        stats,
        0.25,
    )
    .unwrap();
    let cfg = SolverConfig {
        t_max: 10.0,
        snapshot_every: 5.0,
        dt: 0.01,
        tolerance: 1e-8,
        ..SolverConfig::default()
    };
    let traj = solve_homogeneous(&w0, &op, &cfg).unwrap();
    assert_eq!(traj.max_entropy_decrease, 0.0);
    assert!(traj.mass_drift <= 1e-10, "{}", traj.mass_drift);
    let end = w0.with_values(traj.snapshots.last().unwrap().clone()).unwrap();
    let m0 = w0.moments(&model).unwrap();
    let m1 = end.moments(&model).unwrap();
    assert!((m1.energy - m0.energy).abs() <= 1e-8 * m0.energy.abs());
    for (a, b) in m0.momentum.iter().zip(&m1.momentum) {
        assert!((a - b).abs() <= 1e-8);
    }
    let fit = fit_thermal(&model, grid.clone(), stats, &m1, false).unwrap();
    let thermal = thermal_distribution(&model, grid, fit.temperature, fit.mu, stats).unwrap();
    let dist = end.l1_distance(&thermal).unwrap() / m1.mass;
    assert!(dist <= 1e-3, "distance to thermal {dist}");
    assert!(w0.l1_distance(&thermal).unwrap() / m0.mass > 1e-2);
}

#[test]
fn linear_run_matches_the_matrix_exponential() {
    let (grid, model) = lattice(3, 8);
    let m = CollisionMatrix::build(grid.clone(), &model, PotentialSpectrum::Gaussian { amplitude: 1.0, width: 1.0 }, 0.5)
        .unwrap();
    let w0 = Distribution::from_fn(grid.clone(), Statistics::Boltzmann, |k| (-(k[0] - 1.0).powi(2) - k[1] * k[1]).exp())
        .unwrap();
    let cfg = SolverConfig {
        t_max: 3.0,
        snapshot_every: 1.0,
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    let traj = solve_homogeneous(&w0, &m, &cfg).unwrap();
    let spec = m.spectrum_decomposition();
    let x0 = w0.values();
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        let e = spec.exp(*t);
        let want: Vec<f64> = (0..x0.len()).map(|i| (0..x0.len()).map(|j| e[(i, j)] * x0[j]).sum()).collect();
        let scale = want.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        for (a, b) in snap.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-8 * scale, "t = {t}: {a} vs {b}");
        }
    }
    let var: Vec<f64> = traj.snapshots.iter().map(|s| m.shell_variance(s)).collect();
    assert!(var.windows(2).all(|p| p[1] <= p[0]), "{var:?}");
}

#[test]
fn zero_collision_keeps_the_state() {
    let (grid, _) = lattice(2, 6);
    let w0 = Distribution::from_fn(grid.clone(), Statistics::Boson, |k| 0.3 + 0.1 * k[0].sin()).unwrap();
    let op = ZeroCollision { len: grid.len(), stats: Statistics::Boson };
    let traj = solve_homogeneous(&w0, &op, &SolverConfig { t_max: 2.0, ..SolverConfig::default() }).unwrap();
    for s in &traj.snapshots {
        assert_eq!(s.as_slice(), w0.values());
    }
    let st = short_time_check(&w0, &op, &[0.01, 0.1]).unwrap();
    assert!(st.errors.iter().all(|e| *e == 0.0));
    assert!(st.order.is_none());
}

#[test]
fn linear_short_time_residual_matches_the_exponential_oracle() {
    let (grid, model) = lattice(3, 8);
    let m = CollisionMatrix::build(grid.clone(), &model, PotentialSpectrum::Constant(1.0), 0.5).unwrap();
    let w0 = Distribution::from_fn(grid.clone(), Statistics::Boltzmann, |k| 1.0 + 0.5 * k[0].cos() + 0.2 * k[1].sin())
        .unwrap();
    let ts = [0.01, 0.03, 0.1];
    let rep = short_time_check(&w0, &m, &ts).unwrap();
    let spec = m.spectrum_decomposition();
    let c0 = m.apply(&w0).unwrap();
    let wt = grid.uniform_weight();
    for (t, e) in ts.iter().zip(&rep.errors) {
        let ex = spec.exp(*t);
        let x = w0.values();
        let want: f64 = (0..x.len())
            .map(|i| {
                let et: f64 = (0..x.len()).map(|j| ex[(i, j)] * x[j]).sum();
                ((et - x[i]) / t - c0[i]).abs()
            })
            .sum::<f64>()
            * wt;
        assert!((e - want).abs() <= 1e-6 * want, "t = {t}: {e} vs {want}");
    }
    let order = rep.order.unwrap();
    assert!((0.9..=1.1).contains(&order), "{order}");
}

#[test]
fn uniform_field_reduces_to_the_homogeneous_solution() {
    let (grid, model) = lattice(2, 8);
    let m = CollisionMatrix::build(grid.clone(), &model, PotentialSpectrum::Constant(1.0), 0.4).unwrap();
    let w0 = Distribution::from_fn(grid.clone(), Statistics::Boltzmann, |k| (-(k[0] - 1.0).powi(2)).exp()).unwrap();
    let spatial = SpatialGrid::new(2, 6, 6.0).unwrap();
    let f0 = WignerField::uniform(spatial, &w0).unwrap();
    let cfg = SolverConfig {
        dt: 0.05,
        t_max: 1.0,
        snapshot_every: 0.5,
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    let (f1, traj) = solve_inhomogeneous(&f0, &m, &model, &cfg, FlightScheme::Linear, &mut |_, _| {}).unwrap();
    assert!(traj.mass_drift <= 1e-8);
    let hom = solve_homogeneous(&w0, &m, &cfg).unwrap();
    let want = hom.snapshots.last().unwrap();
    for c in 0..f1.spatial().cells() {
        for (a, b) in f1.cell(c).iter().zip(want) {
            assert!((a - b).abs() <= 1e-10, "cell {c}: {a} vs {b}");
        }
    }
}

#[test]
fn no_collisions_is_pure_free_flight() {
    let (grid, model) = lattice(1, 16);
    let spatial = SpatialGrid::new(1, 32, 16.0).unwrap();
    let f0 = WignerField::from_fn(spatial, grid.clone(), Statistics::Boltzmann, |r, k| {
        (1.0 + 0.5 * (2.0 * std::f64::consts::PI * r[0] / 16.0).cos()) * (-(k[0] * k[0])).exp()
    })
    .unwrap();
    let op = ZeroCollision { len: grid.len(), stats: Statistics::Boltzmann };
    let cfg = SolverConfig {
        dt: 0.25,
        t_max: 1.0,
        snapshot_every: 1.0,
        splitting: Splitting::Lie,
        ..SolverConfig::default()
    };
    let (f1, _) = solve_inhomogeneous(&f0, &op, &model, &cfg, FlightScheme::Linear, &mut |_, _| {}).unwrap();
    let mut g = f0.clone();
    for _ in 0..4 {
        g = free_flight(&g, &model, 0.25, FlightScheme::Linear).unwrap();
    }
    for (a, b) in f1.values().iter().zip(g.values()) {
        assert!((a - b).abs() <= 1e-13);
    }
}

#[test]
fn strang_splitting_is_second_order() {
    let (grid, model) = lattice(1, 16);
    let m = CollisionMatrix::build(grid.clone(), &model, PotentialSpectrum::Gaussian { amplitude: 1.0, width: 1.0 }, 0.3)
        .unwrap();
    let spatial = SpatialGrid::new(1, 256, 16.0).unwrap();
    let f0 = WignerField::from_fn(spatial, grid.clone(), Statistics::Boltzmann, |r, k| {
        (1.0 + 0.5 * (2.0 * std::f64::consts::PI * r[0] / 16.0).cos()) * (-(k[0] - 1.0).powi(2)).exp()
    })
    .unwrap();
    let run = |dt: f64| {
        let cfg = SolverConfig {
            dt,
            t_max: 2.0,
            snapshot_every: 2.0,
            splitting: Splitting::Strang,
            ..SolverConfig::default()
        };
        solve_inhomogeneous(&f0, &m, &model, &cfg, FlightScheme::Cubic, &mut |_, _| {}).unwrap().0
    };
    let (a, b, c) = (run(0.4), run(0.2), run(0.1));
    let diff = |x: &WignerField, y: &WignerField| -> f64 {
        x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    };
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((3.0..=5.0).contains(&ratio), "contraction {ratio}");
}
