use debye_limit::energy::Verdict;
use debye_limit::experiments::{fit_order, run_sweep, RowStatus, SweepSpec};
use debye_limit::RunOptions;
use proptest::prelude::*;

/// Default data and window, eps shifted down to where the remainders have
/// saturated. Every verdict is expected to pass here.
#[test]
fn asymptotic_regime_sweep_passes_every_verdict() {
    let spec = SweepSpec {
        grid_points: 128,
        eps_list: vec![1e-3, 1e-4, 1e-5, 1e-6],
        ..SweepSpec::default()
    };
    let rep = run_sweep(&spec, 0).unwrap();
    assert!(rep.rows.iter().all(|r| r.status == RowStatus::Ok));
    let n = rep.fits.n_error.unwrap();
    let u = rep.fits.u_error.unwrap();
    assert!((0.85..=1.15).contains(&n.slope) && n.r_squared >= 0.99, "{n:?}");
    assert!((0.85..=1.15).contains(&u.slope) && u.r_squared >= 0.99, "{u:?}");
    assert!(n.slope_ci95.0 <= n.slope && n.slope <= n.slope_ci95.1);
    assert_eq!(rep.verdicts.convergence, Verdict::Pass);
    assert_eq!(rep.verdicts.gap_order, Verdict::Pass);
    assert_eq!(rep.verdicts.gap_identity, Verdict::Pass);
    assert!(rep.verdicts.gronwall.iter().all(|g| g.verdict == Verdict::Pass));
    assert!(rep.verdicts.elliptic.iter().all(|e| e.verdict == Verdict::Pass));
    assert!(rep.verdicts.all_pass());
}

#[test]
fn sweeps_are_bitwise_reproducible() {
    let spec = SweepSpec {
        grid_points: 32,
        eps_list: vec![1e-1, 1e-2, 1e-3],
        run: RunOptions {
            t_end: 0.05,
            ..RunOptions::default()
        },
        ..SweepSpec::default()
    };
    let a = run_sweep(&spec, 1).unwrap().without_timing();
    let b = run_sweep(&spec, 2).unwrap().without_timing();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.rows.len(), spec.eps_list.len());
    for (row, eps) in a.rows.iter().zip(&spec.eps_list) {
        assert_eq!(row.eps, *eps);
        assert!(row.errors.hs.iter().all(|e| e.n.is_finite() && e.n >= 0.0 && e.u.is_finite() && e.u >= 0.0));
        assert!(row.errors.quasineutral_gap >= 0.0 && row.errors.phi_ln_n >= 0.0);
    }
}

#[test]
fn impossible_bound_fails_the_monitor() {
    let spec = SweepSpec {
        grid_points: 32,
        eps_list: vec![1e-1, 1e-2],
        run: RunOptions {
            t_end: 0.05,
            ..RunOptions::default()
        },
        bound_factor: 1e-9,
        ..SweepSpec::default()
    };
    let rep = run_sweep(&spec, 1).unwrap();
    assert!(rep.verdicts.gronwall.iter().all(|g| g.verdict == Verdict::Fail));
    assert!(rep.verdicts.any_fail());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fit_recovers_exact_exponents(p in -3.0..3.0f64, c in 0.01..100.0f64, n in 3usize..8, start in -1.0..0.0f64) {
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let eps = 10f64.powf(start - i as f64 * 0.5);
                (eps, c * eps.powf(p))
            })
            .collect();
        let (slope, intercept, r2) = fit_order(&pairs).unwrap();
        prop_assert!((slope - p).abs() <= 1e-12);
        prop_assert!((intercept - c.ln()).abs() <= 1e-10);
        prop_assert!(r2 >= 1.0 - 1e-12);
    }
}
