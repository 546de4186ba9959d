use qkin::microscopic::{
    averaged_momentum_distribution, gaussian_bump, kinetic_comparison, DisorderEnsemble, DisorderLaw, KineticConfig,
};

const BUDGET: f64 = 1e12;

#[test]
fn free_lattice_keeps_the_momentum_distribution() {
    let ens = DisorderEnsemble::new(2, 16, 0.0, DisorderLaw::GaussianUnit, 1, 3).unwrap();
    let w0 = gaussian_bump(ens.momentum_grid().unwrap(), &[1.0, -0.5], 0.6).unwrap();
    let avg = averaged_momentum_distribution(&ens, &w0, &[0.0, 2.0], BUDGET).unwrap();
    let scale = w0.values().iter().cloned().fold(0.0, f64::max);
    for a in &avg {
        for (x, y) in a.mean.iter().zip(w0.values()) {
            assert!((x - y).abs() <= 1e-10 * scale, "tau {}: {x} vs {y}", a.tau);
        }
    }
}

#[test]
fn averages_do_not_depend_on_the_worker_count() {
    let ens = DisorderEnsemble::new(2, 16, 0.5, DisorderLaw::UniformUnit, 7, 4).unwrap();
    let w0 = gaussian_bump(ens.momentum_grid().unwrap(), &[1.0, 0.0], 0.5).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| averaged_momentum_distribution(&ens, &w0, &[0.5, 1.0], BUDGET).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.mean, y.mean);
        assert_eq!(x.samples, y.samples);
    }
}

#[test]
fn distance_to_the_kinetic_solution_shrinks_with_the_coupling() {
    let base = DisorderEnsemble::new(2, 32, 0.5, DisorderLaw::GaussianUnit, 11, 12).unwrap();
    let w0 = gaussian_bump(base.momentum_grid().unwrap(), &[1.0, 0.0], 0.5).unwrap();
    let cfg = KineticConfig {
        epsilons: vec![0.5, 0.25],
        taus: vec![1.0],
        ..KineticConfig::default()
    };
    let rep = kinetic_comparison(&base, &w0, &cfg).unwrap();
    assert!(rep.decreasing[0], "{:?}", rep.distances);
    assert!(rep.distances[1][0] < rep.distances[0][0]);
}
