//! Randomized invariants.

use detctl_core::suites::interpolation_suite;
use detctl_core::{
    defect, fit_decay_rate, linear_growth_rate, observe, gamma_sq, simulate, unstable_mode_count,
    ClosedLoopParams, Field, Grid1D, InitialCondition, InterpolantSpec, Scheme, SimConfig,
    SpectralOps, TrajectoryRecord, TrialEnsemble,
};
use proptest::prelude::*;

fn series(rate: f64, c: f64, n: usize, dt: f64) -> TrajectoryRecord {
    let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let l2 = times.iter().map(|&t| (c * (-rate * t).exp()).sqrt()).collect();
    TrajectoryRecord { times, l2, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mode_count_matches_enumeration(nu in 0.05f64..10.0, alpha in 0.01f64..200.0, l in 0.1f64..10.0) {
        let p = ClosedLoopParams::open_loop(nu, alpha, l).unwrap();
        let brute = (0..=1000).filter(|&k| linear_growth_rate(k, &p) < 0.0).count();
        prop_assert_eq!(unstable_mode_count(&p), brute);
    }

    #[test]
    fn fit_recovers_exact_exponents(rate in -5.0f64..50.0, c in 1e-3f64..1e3) {
        let fit = fit_decay_rate(&series(rate, c, 200, 0.01), 0.0).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-10 * rate.abs().max(1.0));
    }

    #[test]
    fn transforms_round_trip(seed in any::<u64>(), periodic in any::<bool>()) {
        let grid = if periodic { Grid1D::periodic(2.0, 64) } else { Grid1D::neumann(2.0, 64) }.unwrap();
        let ens = TrialEnsemble::new(seed, 1, 8).unwrap();
        let f = ens.field::<f64>(0, &grid).unwrap();
        let ops = SpectralOps::new(grid);
        let c = ops.analyze(f.samples());
        let back = ops.synthesize(&c);
        for (a, b) in back.iter().zip(f.samples()) {
            prop_assert!((a - b).abs() < 1e-13);
        }
        let sampled = f.inner(&f).unwrap();
        prop_assert!((ops.l2_sq(&c) - sampled).abs() < 1e-12 * sampled.max(1.0));
    }

    #[test]
    fn volume_and_nodal_defects_are_bounded(seed in any::<u64>(), log_n in 1u32..5) {
        let n = 1usize << log_n;
        let grid = Grid1D::neumann(1.0, 256).unwrap();
        let ens = TrialEnsemble::new(seed, 4, 20).unwrap();
        let h = 1.0 / n as f64;
        for i in 0..4 {
            let f = ens.field::<f64>(i, &grid).unwrap();
            let bound = h * f.dx_norm();
            prop_assert!(defect(&f, &InterpolantSpec::volume(1.0, n).unwrap()).unwrap() <= bound);
            prop_assert!(defect(&f, &InterpolantSpec::nodal(1.0, n).unwrap()).unwrap() <= bound);
            let fourier = InterpolantSpec::fourier(1.0, n, true).unwrap();
            prop_assert!(defect(&f, &fourier).unwrap() <= bound / std::f64::consts::PI);
        }
    }

    #[test]
    fn sharp_poincare_form_holds(seed in any::<u64>(), log_n in 1u32..5) {
        // ||phi||^2 <= h gamma^2 + (h / pi)^2 ||phi_x||^2 with gamma the cell averages
        let n = 1usize << log_n;
        let grid = Grid1D::neumann(1.0, 256).unwrap();
        let spec = InterpolantSpec::volume(1.0, n).unwrap();
        let h = 1.0 / n as f64;
        let f = TrialEnsemble::new(seed, 1, 20).unwrap().field::<f64>(0, &grid).unwrap();
        let g2 = gamma_sq(&observe(&f, &spec).unwrap());
        let lhs = f.l2_norm().powi(2);
        let rhs = h * g2 + (h / std::f64::consts::PI).powi(2) * f.dx_norm().powi(2);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}

#[test]
fn half_width_poincare_form_fails_for_the_top_unseen_mode() {
    // cos(N pi x / L) has zero cell averages, and its ratio to (h / 2 pi)^2 ||phi_x||^2 is 4
    let n = 4;
    let grid = Grid1D::neumann(1.0, 256).unwrap();
    let spec = InterpolantSpec::volume(1.0, n).unwrap();
    let f = Field::from_fn(grid, |x| (n as f64 * std::f64::consts::PI * x).cos()).unwrap();
    let h = 0.25;
    let g2 = gamma_sq(&observe(&f, &spec).unwrap());
    assert!(g2 < 1e-28);
    let ratio = f.l2_norm().powi(2) / ((h / (2.0 * std::f64::consts::PI)).powi(2) * f.dx_norm().powi(2));
    assert!((ratio - 4.0).abs() < 1e-9);
}

#[test]
fn interpolation_suite_is_deterministic_and_passes() {
    let a = interpolation_suite(99, 40);
    let b = interpolation_suite(99, 40);
    assert_eq!(a, b);
    assert!(a.passed);
}

#[test]
fn runs_are_reproducible() {
    let spec = InterpolantSpec::volume(1.0, 4).unwrap();
    let p = ClosedLoopParams::new(1.0, 8.0, 1.0, 20.0, Some(spec)).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        t_final: 1.0,
        record_every: 10,
        ic: InitialCondition::RandomBand { seed: 17, kmax: 5, amplitude: 2.0 },
        grid: Grid1D::neumann(1.0, 64).unwrap(),
        scheme: Scheme::Etd1,
    };
    let a = simulate(&cfg, &p).unwrap();
    let b = simulate(&cfg, &p).unwrap();
    assert_eq!(a, b);
}
