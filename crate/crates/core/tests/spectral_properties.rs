use std::f64::consts::PI;

use debye_limit::Grid;
use proptest::prelude::*;

fn grid_size() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![32usize, 64, 128])
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..=8)
}

fn trig(grid: &Grid, c: &[(f64, f64)]) -> debye_limit::Field {
    grid.sample(|x| {
        c.iter().enumerate().fold(0.0, |acc, (m, (a, b))| {
            let arg = 2.0 * PI * m as f64 * x;
            acc + a * arg.cos() + b * arg.sin()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval(n in grid_size(), c in coeffs()) {
        let g = Grid::new(n).unwrap();
        let f = trig(&g, &c);
        let energy: f64 = f.spectrum().iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n) as f64;
        let l2 = f.l2_norm().powi(2);
        prop_assert!((l2 - energy).abs() <= 1e-12 * energy.max(1e-300));
    }

    #[test]
    fn derivative_is_linear_and_kills_constants(n in grid_size(), c in coeffs(), d in coeffs(), a in -3.0..3.0f64, k in -5.0..5.0f64) {
        let g = Grid::new(n).unwrap();
        let (f, h) = (trig(&g, &c), trig(&g, &d));
        let lhs = (&(&f * a) + &h).dx();
        let rhs = &(&f.dx() * a) + &h.dx();
        prop_assert!((&lhs - &rhs).max_abs() <= 1e-10 * (1.0 + rhs.max_abs()));
        prop_assert!(g.constant(k).dx().max_abs() == 0.0);
    }

    #[test]
    fn derivatives_compose(n in grid_size(), c in coeffs()) {
        let g = Grid::new(n).unwrap();
        let f = trig(&g, &c);
        let twice = f.dx().dx();
        let direct = f.dxx();
        prop_assert!((&twice - &direct).l2_norm() <= 1e-10 * direct.l2_norm().max(1e-300));
    }

    #[test]
    fn derivative_integrates_to_zero(n in grid_size(), vals in prop::collection::vec(-10.0..10.0f64, 128)) {
        let g = Grid::new(n).unwrap();
        let f = debye_limit::Field::new(&g, vals[..n].to_vec()).unwrap();
        prop_assert!(f.dx().integrate().abs() <= 1e-13);
    }

    #[test]
    fn hs_norm_is_monotone_in_s(n in grid_size(), c in coeffs()) {
        let g = Grid::new(n).unwrap();
        let f = trig(&g, &c);
        for s in 0..4 {
            prop_assert!(f.hs_norm(s) <= f.hs_norm(s + 1));
        }
    }

    #[test]
    fn dealias_is_idempotent_low_pass(n in grid_size(), c in coeffs(), vals in prop::collection::vec(-1.0..1.0f64, 128)) {
        let g = Grid::new(n).unwrap();
        let low = trig(&g, &c);
        // modes <= 7 survive the 2/3 cutoff on every grid >= 32
        prop_assert!((&low.dealias() - &low).max_abs() <= 1e-13);
        let rough = debye_limit::Field::new(&g, vals[..n].to_vec()).unwrap();
        let once = rough.dealias();
        prop_assert!((&once.dealias() - &once).max_abs() <= 1e-14);
    }
}

#[test]
fn mode_just_below_nyquist_is_removed() {
    for n in [32, 64, 128, 256] {
        let g = Grid::new(n).unwrap();
        let j = (n / 2 - 1) as f64;
        let f = g.sample(|x| (2.0 * PI * j * x).cos());
        assert!(f.dealias().max_abs() <= 1e-13, "n = {n}");
    }
}
