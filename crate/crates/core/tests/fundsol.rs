use std::f64::consts::PI;

use hillspec::fundsol::{det, free_solutions, fundamental_pair, monodromy, FundSolver, Mat2};
use hillspec::hill::HillOperator;
use hillspec::PeriodicPotential;
use num_complex::Complex64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn mat_diff(a: &Mat2, b: &Mat2) -> f64 {
    (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (a[i][j] - b[i][j]).norm())
        .fold(0.0, f64::max)
}

/// Classical RK4 on `y'' = (q − λ) y` for both unit initial conditions.
fn rk4_monodromy(q: &PeriodicPotential, lambda: Complex64, steps: usize) -> Mat2 {
    let h = 1.0 / steps as f64;
    let rhs = |x: f64, y: [Complex64; 2]| [y[1], (q.internal_value(x) - lambda) * y[0]];
    let solve = |mut y: [Complex64; 2]| {
        for i in 0..steps {
            let x = i as f64 * h;
            let add = |y: [Complex64; 2], k: [Complex64; 2], s: f64| [y[0] + k[0] * s, y[1] + k[1] * s];
            let k1 = rhs(x, y);
            let k2 = rhs(x + h / 2.0, add(y, k1, h / 2.0));
            let k3 = rhs(x + h / 2.0, add(y, k2, h / 2.0));
            let k4 = rhs(x + h, add(y, k3, h));
            for d in 0..2 {
                y[d] += (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]) * (h / 6.0);
            }
        }
        y
    };
    let th = solve([c(1.0, 0.0), c(0.0, 0.0)]);
    let ph = solve([c(0.0, 0.0), c(1.0, 0.0)]);
    [[th[0], ph[0]], [th[1], ph[1]]]
}

fn corpus() -> Vec<PeriodicPotential> {
    vec![
        PeriodicPotential::zero(),
        PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0)),
        PeriodicPotential::mathieu(c(1.0, 0.0), c(1.0, 0.0)),
        PeriodicPotential::optical(0.5).unwrap(),
        PeriodicPotential::optical(0.8884370040752072).unwrap(),
        PeriodicPotential::new([(1, c(0.3, -0.7)), (-2, c(1.5, 0.2)), (3, c(-0.4, 0.1))], 1.0).unwrap(),
        PeriodicPotential::new([(1, c(2.0, 0.0)), (-1, c(0.5, 0.0))], 2.5).unwrap(),
    ]
}

/// Spectral parameters around the low bands. Far below the spectrum the solutions grow
/// like `e^{L√|λ|}` and the absolute determinant defect grows with their square.
fn lambdas() -> Vec<Complex64> {
    vec![
        c(-1.0, 0.0),
        c(0.0, 0.0),
        c(4.0, 1.0),
        c(25.0, -3.0),
        c(60.0, 0.5),
        c(100.0, 0.0),
    ]
}

#[test]
fn free_monodromy_matches_closed_form_at_complex_lambda() {
    let solver = FundSolver::new(&PeriodicPotential::zero(), 2048).unwrap();
    for i in 0..50 {
        // Deterministic spread over −10 < Re λ < 100 and −20 < Im λ < 20.
        let s = i as f64 / 49.0;
        let lambda = c(-10.0 + 110.0 * s, 20.0 * (7.3 * s).sin());
        let m = solver.monodromy(lambda).unwrap();
        let k = lambda.sqrt();
        let (th, ph) = free_solutions(lambda, 1.0);
        let exact = [[th, ph], [-k * k.sin(), th]];
        let scale = 1.0 + th.norm() + ph.norm() + exact[1][0].norm();
        assert!(
            mat_diff(&m, &exact) < 1e-11 * scale,
            "λ = {lambda}: {:e}",
            mat_diff(&m, &exact) / scale
        );
    }
}

#[test]
fn mathieu_monodromy_matches_runge_kutta() {
    let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0));
    for lambda in [c(5.0, 1.0), c(30.0, -2.0), c(-3.0, 0.0)] {
        let m = FundSolver::new(&q, 2048)
            .unwrap()
            .monodromy(q.to_internal(lambda))
            .unwrap();
        let r = rk4_monodromy(&q, q.to_internal(lambda), 20_000);
        assert!(mat_diff(&m, &r) < 1e-9, "λ = {lambda}: {:e}", mat_diff(&m, &r));
    }
}

#[test]
fn grid_refinement_shows_fourth_order() {
    let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0));
    let lambda = c(40.0, 3.0);
    let at = |n: usize| FundSolver::new(&q, n).unwrap().monodromy(lambda).unwrap();
    let reference = at(8192);
    let (e1, e2) = (mat_diff(&at(64), &reference), mat_diff(&at(128), &reference));
    let order = (e1 / e2).log2();
    assert!((3.6..4.4).contains(&order), "observed order {order}");
    assert!(mat_diff(&at(2048), &reference) < 1e-10);
}

#[test]
fn wronskian_is_conserved_over_the_corpus() {
    for q in corpus() {
        let solver = FundSolver::new(&q, 2048).unwrap();
        for lambda in lambdas() {
            let pair = solver.pair(q.to_internal(lambda)).unwrap();
            assert!(pair.wronskian_residual < 1e-10, "{:?} at {lambda}", q.coeffs());
            assert!((det(&pair.monodromy) - 1.0).norm() < 1e-10);
        }
    }
}

#[test]
fn evanescent_parameters_report_the_determinant_defect() {
    // optical(0.5) at λ = −10: |θ|, |φ'| reach ~1e4 and rounding alone breaks det = 1 at 1e-10.
    let q = PeriodicPotential::optical(0.5).unwrap();
    let solver = FundSolver::new(&q, 2048).unwrap();
    let err = solver.pair(q.to_internal(c(-10.0, 0.0))).unwrap_err();
    assert!(matches!(err, hillspec::Error::AccuracyFailure { .. }));
    let relaxed = solver.with_tolerance(1e-5).pair(q.to_internal(c(-10.0, 0.0))).unwrap();
    assert!(relaxed.wronskian_residual > 1e-10);
}

#[test]
fn discriminant_is_analytic_on_small_circles() {
    // The mean of F over a circle equals its value at the centre.
    for q in corpus().into_iter().take(5) {
        let op = HillOperator::with_defaults(&q).unwrap();
        for centre in [c(3.0, 0.5), c(20.0, -1.0)] {
            let n = 32;
            let mean: Complex64 = (0..n)
                .map(|j| {
                    op.discriminant(centre + Complex64::from_polar(0.5, 2.0 * PI * j as f64 / n as f64))
                        .unwrap()
                })
                .sum::<Complex64>()
                / n as f64;
            assert!((mean - op.discriminant(centre).unwrap()).norm() < 1e-6);
        }
    }
}

#[test]
fn period_rescaling_of_the_free_discriminant() {
    // For period L the free discriminant is 2cos(L√λ).
    let q = PeriodicPotential::new(Vec::<(i64, Complex64)>::new(), 2.0).unwrap();
    let op = HillOperator::with_defaults(&q).unwrap();
    for lambda in [c(1.0, 0.0), c(7.5, 0.0), c(3.0, 2.0)] {
        let exact = 2.0 * (2.0 * lambda.sqrt()).cos();
        assert!((op.discriminant(lambda).unwrap() - exact).norm() < 1e-10);
    }
}

#[test]
fn pair_samples_follow_the_free_solutions() {
    let lambda = c(12.0, -4.0);
    let pair = fundamental_pair(&PeriodicPotential::zero(), lambda, 256).unwrap();
    for j in (0..=256).step_by(16) {
        let (th, ph) = free_solutions(lambda, pair.x(j));
        assert!((pair.theta[j] - th).norm() < 1e-12);
        assert!((pair.phi[j] - ph).norm() < 1e-12);
    }
    let mut csv = Vec::new();
    pair.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 258);
}

#[test]
fn tiny_grids_are_rejected() {
    assert!(FundSolver::new(&PeriodicPotential::zero(), 1).is_err());
}

fn coefficient() -> impl Strategy<Value = Complex64> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| c(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn determinant_stays_one(a in coefficient(), b in coefficient(), re in -10.0..80.0f64, im in -10.0..10.0f64) {
        let q = PeriodicPotential::mathieu(a, b);
        let m = FundSolver::new(&q, 512).unwrap().monodromy(c(re, im)).unwrap();
        prop_assert!((det(&m) - 1.0).norm() < 1e-10);
    }

    #[test]
    fn adjoint_monodromy_is_the_conjugate(a in coefficient(), b in coefficient(), re in -10.0..80.0f64, im in -10.0..10.0f64) {
        let solver = FundSolver::new(&PeriodicPotential::mathieu(a, b), 512).unwrap();
        let lambda = c(re, im);
        let m = solver.monodromy(lambda).unwrap();
        let adj = solver.adjoint().monodromy(lambda.conj()).unwrap();
        let conj = [[m[0][0].conj(), m[0][1].conj()], [m[1][0].conj(), m[1][1].conj()]];
        prop_assert!(mat_diff(&adj, &conj) < 1e-12 * (1.0 + m[0][0].norm() + m[1][0].norm()));
    }

    #[test]
    fn default_monodromy_matches_explicit_solver(re in -10.0..80.0f64) {
        let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0));
        let a = monodromy(&q, c(re, 0.0)).unwrap();
        let b = FundSolver::new(&q, 2048).unwrap().monodromy(c(re, 0.0)).unwrap();
        prop_assert_eq!(a, b);
    }
}
