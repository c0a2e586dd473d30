use std::f64::consts::PI;

use hillspec::floquet::{
    adjoint_eigenfunction, alpha_curve, bloch_function, eigen_residual, eigen_triple, normalized_eigenfunction,
    norming_constant,
};
use hillspec::galerkin::{galerkin_eigenvalues, galerkin_eigenvector};
use hillspec::hill::{uniform_t_grid, HillOperator};
use hillspec::quad;
use hillspec::PeriodicPotential;
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn mathieu(a: f64, b: f64) -> HillOperator {
    HillOperator::with_defaults(&PeriodicPotential::mathieu(c(a, 0.0), c(b, 0.0))).unwrap()
}

#[test]
fn biorthonormality_of_first_eight_pairs() {
    let op = mathieu(1.0, 2.0);
    let t = 1.0;
    let eig = op.bloch_eigenvalues(t, 8).unwrap();
    let triples: Vec<_> = eig.iter().map(|&l| eigen_triple(&op, t, l).unwrap()).collect();
    let n = triples[0].psi.len() - 1;
    for (m, tm) in triples.iter().enumerate() {
        assert!((quad::norm(&tm.psi[..n]) - 1.0).abs() < 1e-10);
        assert!((quad::norm(&tm.psi_star[..n]) - 1.0).abs() < 1e-10);
        assert!(tm.alpha.norm() <= 1.0 + 1e-12 && tm.alpha.norm() > 0.0);
        assert!((tm.projection_norm() * tm.alpha.norm() - 1.0).abs() < 1e-10);
        for (k, tk) in triples.iter().enumerate() {
            let g = quad::inner(&tm.psi[..n], &tk.x_elem[..n]);
            let expected = if m == k { 1.0 } else { 0.0 };
            let tol = if m == k { 1e-8 } else { 1e-7 };
            assert!((g - expected).norm() < tol, "({m},{k}) = {g}");
        }
    }
}

#[test]
fn eigen_residuals_and_boundary_conditions() {
    let op = mathieu(1.0, 2.0);
    let t = 1.0;
    let eig = op.bloch_eigenvalues(t, 4).unwrap();
    let phi = bloch_function(&op, t, eig[0]).unwrap();
    assert!(phi.quasi_periodicity_residual() < 1e-7);
    for &l in &eig {
        let psi = normalized_eigenfunction(&op, t, l).unwrap();
        assert!(eigen_residual(&op, t, l, &psi) < 1e-6);
        let psi_star = adjoint_eigenfunction(&op, t, l).unwrap();
        assert!(eigen_residual(&op.adjoint(), t, l.conj(), &psi_star) < 1e-6);
    }
}

#[test]
fn real_potential_has_unit_alpha() {
    let op = mathieu(1.0, 1.0);
    for t in [0.3, 1.0, 2.5] {
        for l in op.bloch_eigenvalues(t, 4).unwrap() {
            let tr = eigen_triple(&op, t, l).unwrap();
            assert!((tr.alpha.norm() - 1.0).abs() < 1e-8);
            let n = tr.psi.len() - 1;
            let diff: Vec<Complex64> = tr.psi.iter().zip(&tr.x_elem).map(|(a, b)| a - b).collect();
            assert!(quad::norm(&diff[..n]) < 1e-8);
        }
    }
}

#[test]
fn eigenfunction_matches_galerkin_vector() {
    let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(1.0, 0.0));
    let op = HillOperator::with_defaults(&q).unwrap();
    let t = 1.0;
    let lambda = op.bloch_eigenvalues(t, 2).unwrap()[1];
    let psi = normalized_eigenfunction(&op, t, lambda).unwrap();
    let trunc = 20;
    let v = galerkin_eigenvector(&q, t, trunc, lambda);
    let n = psi.len() - 1;
    let synth: Vec<Complex64> = (0..n)
        .map(|j| {
            let x = j as f64 / n as f64;
            (0..v.len())
                .map(|k| v[k] * Complex64::cis((2.0 * PI * (k as f64 - trunc as f64) + t) * x))
                .sum()
        })
        .collect();
    let mut synth_full = synth.clone();
    synth_full.push(synth[0] * Complex64::cis(t));
    // Same phase rule on both sides.
    let norm = quad::norm(&synth);
    let phase = quad::inner(&psi[..n], &synth);
    let aligned: Vec<Complex64> = synth.iter().map(|z| z * phase / (phase.norm() * norm)).collect();
    let diff: Vec<Complex64> = psi[..n].iter().zip(&aligned).map(|(a, b)| a - b).collect();
    assert!(quad::norm(&diff) < 1e-6, "{}", quad::norm(&diff));
    let _ = galerkin_eigenvalues(&q, t, trunc);
}

#[test]
fn alpha_vanishes_at_critical_optical_collision() {
    // Rounded to six digits the collision only persists down to |t| ~ 1e-4.
    let q = PeriodicPotential::optical(0.8884370040752072).unwrap();
    let op = HillOperator::with_defaults(&q).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..=5 {
        let t = 10f64.powi(-k);
        let eig = op.bloch_eigenvalues(t, 2).unwrap();
        let a = norming_constant(&op, t, eig[1]).unwrap().norm();
        assert!(a < prev);
        prev = a;
    }
    assert!(prev < 1e-3);
    let band = op.band_trace(0, &uniform_t_grid(16)).unwrap();
    let curve = alpha_curve(&op, &band).unwrap();
    assert_eq!(curve.len(), 16);
}
