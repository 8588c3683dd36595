use std::f64::consts::PI;

use debye_limit::experiments::fit_order;
use debye_limit::{solve_phi, solve_phi_limit, Grid, PbSolveOptions};
use proptest::prelude::*;

const W: f64 = 2.0 * PI;

/// `n = exp(phi*) - eps phi*''` for `phi* = a sin(2 pi x) + b cos(4 pi x)`,
/// with the second derivative written out by hand.
fn manufactured(grid: &Grid, a: f64, b: f64, eps: f64) -> (debye_limit::Field, debye_limit::Field) {
    let phi = |x: f64| a * (W * x).sin() + b * (2.0 * W * x).cos();
    let phi_xx = |x: f64| -a * W * W * (W * x).sin() - 4.0 * b * W * W * (2.0 * W * x).cos();
    (grid.sample(phi), grid.sample(|x| phi(x).exp() - eps * phi_xx(x)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn manufactured_family_is_recovered(a in -0.15..0.15f64, b in -0.03..0.03f64, log_eps in -4.0..-1.0f64) {
        let eps = 10f64.powf(log_eps);
        let g = Grid::new(64).unwrap();
        let (phi_star, n) = manufactured(&g, a, b, eps);
        prop_assume!(n.min() > 0.0);
        let sol = solve_phi(&n, eps, &PbSolveOptions::default(), None).unwrap();
        prop_assert!(sol.residual_l2 <= 1e-12);
        prop_assert!((&sol.phi - &phi_star).l2_norm() <= 1e-10);
        // total electron charge equals total ion charge
        prop_assert!((&sol.phi.exp() - &n).integrate().abs() <= 1e-10);
    }
}

#[test]
fn solution_approaches_the_limit_relation_at_first_order() {
    let g = Grid::new(128).unwrap();
    let n = g.sample(|x| 1.0 + 0.1 * (W * x).sin());
    let limit = solve_phi_limit(&n).unwrap();
    let pairs: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eps| {
            let phi = solve_phi(&n, eps, &PbSolveOptions::default(), None).unwrap().phi;
            (eps, (&phi - &limit).l2_norm())
        })
        .collect();
    let (slope, _, _) = fit_order(&pairs).unwrap();
    assert!(slope >= 0.9, "slope {slope}");
}

#[test]
fn potential_is_bracketed_by_log_density() {
    let g = Grid::new(128).unwrap();
    let opts = PbSolveOptions::default();
    for amp in [0.05, 0.2, 0.5] {
        for mode in [1.0, 2.0, 3.0] {
            let n = g.sample(|x| 1.0 + amp * (mode * W * x).sin());
            let ln_n = n.ln();
            for eps in [1e-2, 1e-3, 1e-4] {
                let phi = solve_phi(&n, eps, &opts, None).unwrap().phi;
                assert!(phi.min() >= ln_n.min() - 10.0 * opts.tol);
                assert!(phi.max() <= ln_n.max() + 10.0 * opts.tol);
            }
        }
    }
}

#[test]
fn manufactured_error_decays_spectrally() {
    // phi* = A / (a - cos) is analytic with poles near the real axis, so its
    // coefficients decay geometrically (ratio ~0.38) and N = 32 is visibly
    // under-resolved
    let (eps, amp, a) = (1e-2, 0.05, 1.5);
    let err = |n_points: usize| {
        let g = Grid::new(n_points).unwrap();
        let phi = |x: f64| amp / (a - (W * x).cos());
        let phi_xx = |x: f64| {
            let (s, c) = (W * x).sin_cos();
            let d = a - c;
            amp * W * W * (2.0 * s * s / (d * d * d) - c / (d * d))
        };
        let n = g.sample(|x| phi(x).exp() - eps * phi_xx(x));
        let sol = solve_phi(&n, eps, &PbSolveOptions::default(), None).unwrap();
        (&sol.phi - &g.sample(phi)).l2_norm()
    };
    let (coarse, fine) = (err(32), err(64));
    assert!(coarse > 1e-12, "coarse {coarse:e}");
    assert!(fine * 100.0 <= coarse, "coarse {coarse:e}, fine {fine:e}");
}

#[test]
fn newton_from_limit_initializer_takes_few_steps() {
    let g = Grid::new(128).unwrap();
    let n = g.sample(|x| 1.0 + 0.1 * (W * x).sin());
    for eps in [1e-1, 1e-2, 1e-3] {
        let sol = solve_phi(&n, eps, &PbSolveOptions::default(), None).unwrap();
        assert!(sol.iterations <= 6, "eps {eps}: {} iterations", sol.iterations);
    }
}
