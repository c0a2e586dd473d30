use std::f64::consts::PI;

use hillspec::expansion::*;
use hillspec::floquet::eigen_triple;
use hillspec::hill::HillOperator;
use hillspec::quad;
use hillspec::singular::{local_eigenvalues, CollisionGroup};
use hillspec::{Error, PeriodicPotential};
use num_complex::Complex64;

const V2: f64 = 0.8884370040752072;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn op(q: PeriodicPotential) -> HillOperator {
    HillOperator::with_defaults(&q).unwrap()
}

fn mathieu(a: f64, b: f64) -> HillOperator {
    op(PeriodicPotential::mathieu(c(a, 0.0), c(b, 0.0)))
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn plan() -> GroupingPlan {
    GroupingPlan::new(DEFAULT_H).unwrap()
}

#[test]
fn free_reconstruction_returns_the_input() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let r = reconstruct_t(
        &f,
        &op(PeriodicPotential::zero()),
        &plan(),
        DEFAULT_N_MAX,
        &XGrid::covering(&f, 1.0, 8),
    )
    .unwrap();
    assert!(r.residual < 1e-3, "residual {}", r.residual);
    assert!(r.residual < 1e-8, "residual {}", r.residual);
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    assert!(r.grouped_members.is_empty());
    // The input lives on x = −0.7 .. 1.7, so three periods are sampled.
    assert_eq!(r.x_grid.periods, 3);
    assert!((r.x[0] + 1.0).abs() < 1e-12);
}

#[test]
fn free_reconstruction_of_an_indicator_converges_in_mean_square() {
    // A jump is only reached in L², so the error concentrates next to the edges.
    let f = TestFunction::indicator(0.2, 0.7).unwrap();
    let q = op(PeriodicPotential::zero());
    let coarse = reconstruct_t(&f, &q, &plan(), 16, &XGrid::single(4)).unwrap();
    let fine = reconstruct_t(&f, &q, &plan(), 64, &XGrid::single(4)).unwrap();
    assert!(
        fine.residual < coarse.residual,
        "{} vs {}",
        fine.residual,
        coarse.residual
    );
    assert!(fine.residual < 1e-2, "{}", fine.residual);
    assert!(fine.tail_estimate < coarse.tail_estimate);
}

#[test]
fn free_potential_domains_agree() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = op(PeriodicPotential::zero());
    let xg = XGrid::single(8);
    let rt = reconstruct_t(&f, &q, &plan(), DEFAULT_N_MAX, &xg).unwrap();
    let rl = reconstruct_lambda(&f, &q, &plan(), DEFAULT_N_MAX, &xg).unwrap();
    assert_eq!(rl.mode, Mode::LambdaDomain);
    assert!(max_diff(&rt.reconstruction, &rl.reconstruction) < 1e-6);
    assert!(!rl.f_pm.is_empty());
}

#[test]
fn mathieu_domains_agree_on_one_period() {
    let f = TestFunction::gaussian(0.4, 0.12).unwrap();
    let q = mathieu(1.0, 2.0);
    let xg = XGrid::single(8);
    let rt = reconstruct_t(&f, &q, &plan(), DEFAULT_N_MAX, &xg).unwrap();
    let rl = reconstruct_lambda(&f, &q, &plan(), DEFAULT_N_MAX, &xg).unwrap();
    assert!(rt.x.iter().all(|&x| (0.0..1.0).contains(&x)));
    let d = max_diff(&rt.reconstruction, &rl.reconstruction);
    assert!(d < 1e-3, "max |t − λ| = {d:e}");
    assert!(rt.residual < 1e-6 && rl.residual < 1e-6);
}

#[test]
fn plain_integration_matches_the_split_integral_without_groups() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = mathieu(1.0, 2.0);
    let xg = XGrid::single(16);
    let split = reconstruct_t(&f, &q, &plan(), DEFAULT_N_MAX, &xg).unwrap();
    let plain = plain_integration(&f, &q, DEFAULT_N_MAX, &xg, 8, 12).unwrap();
    assert!(max_diff(&split.reconstruction, &plain.reconstruction) < 1e-6);
}

#[test]
fn reconstruction_does_not_depend_on_the_window_width() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = mathieu(1.0, 2.0);
    let xg = XGrid::single(16);
    let a = reconstruct_t(&f, &q, &GroupingPlan::new(0.02).unwrap(), DEFAULT_N_MAX, &xg).unwrap();
    let b = reconstruct_t(&f, &q, &GroupingPlan::new(0.01).unwrap(), DEFAULT_N_MAX, &xg).unwrap();
    assert!(max_diff(&a.reconstruction, &b.reconstruction) < 2e-3);
    assert!(max_diff(&a.reconstruction, &b.reconstruction) < 1e-8);
}

#[test]
fn reconstruction_is_linear() {
    let f1 = TestFunction::gaussian(0.3, 0.08).unwrap();
    let f2 = TestFunction::gaussian(0.8, 0.1).unwrap();
    let w = c(2.0, -0.5);
    let sum = TestFunction::Combination {
        terms: vec![(c(1.0, 0.0), f1.clone()), (w, f2.clone())],
    };
    let q = mathieu(1.0, 2.0);
    let xg = XGrid {
        first_period: -1,
        periods: 3,
        stride: 16,
    };
    let r = reconstruct_t_many(&[f1, f2, sum], &q, &plan(), DEFAULT_N_MAX, &xg).unwrap();
    let combined: Vec<Complex64> = r[0]
        .reconstruction
        .iter()
        .zip(&r[1].reconstruction)
        .map(|(a, b)| a + w * b)
        .collect();
    assert!(max_diff(&combined, &r[2].reconstruction) < 1e-8);
}

#[test]
fn parseval_holds_for_self_adjoint_potentials() {
    let g = TestFunction::gaussian(0.5, 0.1).unwrap();
    let free = parseval_check(&g, &op(PeriodicPotential::zero()), DEFAULT_N_MAX, &plan()).unwrap();
    assert!(free < 1e-6, "{free:e}");
    let m = parseval_check(&g, &mathieu(1.0, 1.0), DEFAULT_N_MAX, &plan()).unwrap();
    assert!(m < 1e-4, "{m:e}");
    // The indicator's spectrum decays like 1/k², so 16 bands leave about 1% of the energy.
    let ind = parseval_check(
        &TestFunction::indicator(0.2, 0.7).unwrap(),
        &mathieu(1.0, 1.0),
        DEFAULT_N_MAX,
        &plan(),
    )
    .unwrap();
    assert!(ind > 1e-3 && ind < 3e-2, "{ind:e}");
    let more = parseval_check(
        &TestFunction::indicator(0.2, 0.7).unwrap(),
        &mathieu(1.0, 1.0),
        64,
        &plan(),
    )
    .unwrap();
    assert!(more < ind / 3.0, "{more:e} vs {ind:e}");
}

#[test]
fn parseval_rejects_non_self_adjoint_potentials() {
    let g = TestFunction::gaussian(0.5, 0.1).unwrap();
    assert!(matches!(
        parseval_check(&g, &mathieu(1.0, 2.0), 16, &plan()),
        Err(Error::NotSelfAdjoint)
    ));
}

#[test]
fn coefficients_of_a_free_slice_follow_the_fourier_series() {
    // For q = 0, Ψ_n = e^{i(2πk+t)ξ} and a_n is the k-th Fourier coefficient of f_t e^{−itξ}.
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = op(PeriodicPotential::zero());
    let t = 0.7;
    let grid = q.config().grid_size;
    let slice = gelfand_transform(&f, t, translation_truncation(&f, 1.0), 1.0, grid).unwrap();
    let lambdas = q.bloch_eigenvalues(t, 21).unwrap();
    let triples: Vec<_> = lambdas.iter().map(|&l| eigen_triple(&q, t, l).unwrap()).collect();
    let out = coefficients(&slice, &triples).unwrap();
    let periodic: Vec<Complex64> = (0..grid)
        .map(|j| slice.f_t[j] * Complex64::cis(-t * j as f64 / grid as f64))
        .collect();
    let fourier = quad::fourier_coefficients(&periodic);
    for (i, &lambda) in lambdas.iter().enumerate() {
        // λ = (2πk + t)² with k on either side of zero.
        let root = lambda.re.sqrt();
        let k = [(root - t) / (2.0 * PI), (-root - t) / (2.0 * PI)]
            .into_iter()
            .find(|k| (k - k.round()).abs() < 1e-6)
            .unwrap()
            .round() as i64;
        let bin = k.rem_euclid(grid as i64) as usize;
        // |a_n| ‖Ψ_n‖ does not depend on how the triple is normalised.
        let a = out.a[&i].norm() * quad::norm(&triples[i].psi[..grid]);
        assert!(
            (a - fourier[bin].norm()).abs() < 1e-8,
            "n = {i}: {a} vs {}",
            fourier[bin].norm()
        );
    }
    assert!(out.partial_residual.unwrap() < 1e-3);
}

#[test]
fn partial_sums_converge_for_mathieu() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = mathieu(1.0, 2.0);
    let t = 1.0;
    let slice = gelfand_transform(&f, t, translation_truncation(&f, 1.0), 1.0, q.config().grid_size).unwrap();
    let residual = |n: usize| {
        let triples: Vec<_> = q
            .bloch_eigenvalues(t, n)
            .unwrap()
            .into_iter()
            .map(|l| eigen_triple(&q, t, l).unwrap())
            .collect();
        coefficients(&slice, &triples).unwrap().partial_residual.unwrap()
    };
    let (r4, r16) = (residual(4), residual(16));
    assert!(r16 < 1e-5, "{r16:e}");
    assert!(r16 < r4);
}

#[test]
fn coefficients_reject_a_mismatched_triple() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = mathieu(1.0, 2.0);
    let slice = gelfand_transform(&f, 1.0, 2, 1.0, q.config().grid_size).unwrap();
    let lambda = q.bloch_eigenvalues(0.5, 1).unwrap()[0];
    let tr = eigen_triple(&q, 0.5, lambda).unwrap();
    assert!(matches!(coefficients(&slice, &[tr]), Err(Error::InvalidArgument(_))));
}

#[test]
fn gelfand_inverse_returns_one_period() {
    let f = TestFunction::gaussian(0.3, 0.2).unwrap();
    let grid = 512;
    let table = TranslateTable::new(&f, 1.0, translation_truncation(&f, 1.0), grid).unwrap();
    let back = gelfand_inverse(&table, 64);
    let exact: Vec<Complex64> = (0..grid).map(|j| f.evaluate(j as f64 / grid as f64)).collect();
    assert!(max_diff(&back, &exact) < 1e-12);
}

#[test]
fn regular_group_principal_value_is_the_plain_integral() {
    // Away from any singularity the grouped limit is an ordinary integral, here taken
    // from shooting triples while the grouped path goes through the Galerkin projector.
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let q = mathieu(1.0, 2.0);
    let (t0, h) = (1.0, DEFAULT_H);
    let lambda = q.bloch_eigenvalues(t0, 1).unwrap()[0];
    let group = CollisionGroup {
        t0,
        lambda,
        members: vec![0],
    };
    let stride = 32;
    let r = grouped_pv_integral(&f, &q, &group, &plan(), &XGrid::single(stride)).unwrap();
    assert!(r.row.converged);

    let grid = q.config().grid_size;
    let table = TranslateTable::new(&f, 1.0, translation_truncation(&f, 1.0), grid).unwrap();
    let rule = quad::Panel::new(t0 - h, t0 + h, 40);
    let mut exact = vec![Complex64::default(); grid / stride];
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let l = local_eigenvalues(&q, t, lambda, 1).unwrap()[0];
        let tr = eigen_triple(&q, t, l).unwrap();
        let a = tr.coefficient(&table.f_t(t));
        for (i, e) in exact.iter_mut().enumerate() {
            *e += w * a * tr.psi[i * stride];
        }
    }
    let scale = exact.iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(
        max_diff(&r.values, &exact) < 1e-6 * scale,
        "{:e}",
        max_diff(&r.values, &exact) / scale
    );
}

#[test]
fn critical_coupling_needs_exactly_one_grouped_pair() {
    let q = op(PeriodicPotential::optical(V2).unwrap());
    let plan = GroupingPlan::detect(&q, DEFAULT_N_MAX, DEFAULT_H).unwrap();
    assert_eq!(plan.groups0.len(), 1);
    assert!(plan.groups_pi.is_empty());
    assert_eq!(plan.groups0[0].member_set, vec![0, 1]);
    assert_eq!(plan.s0(), vec![0, 1]);

    let f = TestFunction::gaussian(1.5, 0.3).unwrap();
    let xg = XGrid::covering(&f, PI, 8);
    let rt = reconstruct_t(&f, &q, &plan, DEFAULT_N_MAX, &xg).unwrap();
    assert_eq!(rt.grouped_members, vec![vec![0, 1]]);
    assert!(rt.residual < 1e-6, "{:e}", rt.residual);

    let row = &rt.pv_convergence[0];
    let last = *row.grouped_norms.last().unwrap();
    assert!(*row.differences.last().unwrap() < 1e-4 * last);
    // Each member alone keeps growing while the members stay resolved.
    assert!(row.member_levels >= 2);
    for abs in &row.member_abs_integrals {
        assert!(abs.windows(2).all(|w| w[1] > w[0]));
        assert!(abs[1] / abs[0] >= 1.5);
    }

    let rl = reconstruct_lambda(&f, &q, &plan, DEFAULT_N_MAX, &xg).unwrap();
    assert!(max_diff(&rt.reconstruction, &rl.reconstruction) < 1e-4);
}

#[test]
fn report_serialises_with_a_schema_version() {
    let f = TestFunction::gaussian(0.5, 0.1).unwrap();
    let r = reconstruct_t(&f, &op(PeriodicPotential::zero()), &plan(), 8, &XGrid::single(64)).unwrap();
    let json: serde_json::Value = serde_json::from_str(&r.summary_json().unwrap()).unwrap();
    assert_eq!(json["schema_version"], SCHEMA_VERSION);
    assert_eq!(json["mode"], serde_json::json!(r.mode));
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), r.x.len() + 1);
    assert!(text.starts_with("x,re_f,im_f,re_recon,im_recon,abs_err"));
}
