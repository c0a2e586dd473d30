//! Fourier–Galerkin truncation of the quasiperiodic problem.
//!
//! On the basis `e^{i(2πk+t)x}`, `|k| ≤ N`, the operator `L_t(q)` becomes the matrix
//! with diagonal `(2πk+t)²` and entries `c_{j-k}` off the diagonal. It is independent
//! of the shooting code and serves both as a seed generator and as an oracle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::potential::PeriodicPotential;

/// Matrix of `L_t(q)` in internal (period-1) units, indices ordered `k = -N..=N`.
pub fn galerkin_matrix(q: &PeriodicPotential, t: f64, truncation: usize) -> DMatrix<Complex64> {
    let n = 2 * truncation + 1;
    let off = truncation as i64;
    DMatrix::from_fn(n, n, |r, c| {
        let (j, k) = (r as i64 - off, c as i64 - off);
        let mut v = q.internal_coeff(j - k);
        if j == k {
            let w = 2.0 * PI * k as f64 + t;
            v += w * w;
        }
        v
    })
}

/// Eigenvalues of the truncated matrix in original-period units, sorted by magnitude.
///
/// Only the lower part of the list approximates the true spectrum; the top modes feel
/// the truncation.
pub fn galerkin_eigenvalues(q: &PeriodicPotential, t: f64, truncation: usize) -> Vec<Complex64> {
    let truncation = truncation.max(q.max_harmonic());
    let m = galerkin_matrix(q, t, truncation);
    let mut eig: Vec<Complex64> = if q.is_zero() {
        m.diagonal().iter().copied().collect()
    } else {
        let schur = Schur::try_new(m.clone(), 1e-15, 10_000).unwrap_or_else(|| Schur::new(m));
        let (_, tri) = schur.unpack();
        tri.diagonal().iter().copied().collect()
    };
    let scale = q.scale();
    eig.iter_mut().for_each(|z| *z /= scale);
    sort_by_magnitude(&mut eig);
    eig
}

pub(crate) fn sort_by_magnitude(v: &mut [Complex64]) {
    v.sort_by(|a, b| {
        a.norm()
            .total_cmp(&b.norm())
            .then(a.re.total_cmp(&b.re))
            .then(a.im.total_cmp(&b.im))
    });
}

/// Approximate eigenvector (Fourier coefficients, index `k + N`) for an eigenvalue near
/// `lambda` (original units), by inverse iteration.
pub fn galerkin_eigenvector(q: &PeriodicPotential, t: f64, truncation: usize, lambda: Complex64) -> DVector<Complex64> {
    let truncation = truncation.max(q.max_harmonic());
    let n = 2 * truncation + 1;
    let sigma = lambda * q.scale();
    let shift = 1e-10 * (1.0 + sigma.norm());
    let mut m = galerkin_matrix(q, t, truncation);
    for i in 0..n {
        m[(i, i)] -= sigma + shift;
    }
    let lu = m.lu();
    let mut v = DVector::from_element(n, Complex64::new(1.0, 0.0));
    for _ in 0..4 {
        v = match lu.solve(&v) {
            Some(w) => w,
            None => break,
        };
        let norm = v.norm();
        v /= Complex64::from(norm);
    }
    v
}

/// Hill discriminant from the regularized infinite determinant:
/// `F(λ) − 2cos t = (2cos√λ − 2cos t) · det(I + (D_t − λ)⁻¹ Q)`.
/// `lambda` is in original units.
pub fn galerkin_discriminant(q: &PeriodicPotential, lambda: Complex64, truncation: usize) -> Complex64 {
    let lambda = lambda * q.scale();
    let truncation = truncation.max(q.max_harmonic());
    // Any t works; pick one whose free values avoid lambda.
    let t = [0.5, 1.3, 2.1]
        .into_iter()
        .max_by(|&a, &b| min_gap(lambda, a, truncation).total_cmp(&min_gap(lambda, b, truncation)))
        .unwrap_or(0.5);
    let n = 2 * truncation + 1;
    let off = truncation as i64;
    let m = DMatrix::from_fn(n, n, |r, c| {
        let (j, k) = (r as i64 - off, c as i64 - off);
        let w = 2.0 * PI * j as f64 + t;
        let mut v = q.internal_coeff(j - k) / (w * w - lambda);
        if j == k {
            v += 1.0;
        }
        v
    });
    let det = m.lu().determinant();
    let free = 2.0 * crate::fundsol::free_solutions(lambda, 1.0).0;
    let two_cos_t = Complex64::from(2.0 * t.cos());
    two_cos_t + (free - two_cos_t) * det
}

fn min_gap(lambda: Complex64, t: f64, truncation: usize) -> f64 {
    (-(truncation as i64)..=truncation as i64)
        .map(|k| {
            let w = 2.0 * PI * k as f64 + t;
            (lambda - w * w).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Riesz projector `(1/2πi)∮ (z − H)⁻¹ dz` of the truncated matrix (internal units) over
/// the circle `|z − center| = radius`, by the `nodes`-point trapezoid rule.
pub fn riesz_projector(
    q: &PeriodicPotential,
    t: f64,
    truncation: usize,
    center: Complex64,
    radius: f64,
    nodes: usize,
) -> Option<DMatrix<Complex64>> {
    let h = galerkin_matrix(q, t, truncation.max(q.max_harmonic()));
    let n = h.nrows();
    let mut p = DMatrix::<Complex64>::zeros(n, n);
    for m in 0..nodes {
        let w = Complex64::from_polar(radius, 2.0 * PI * (m as f64 + 0.5) / nodes as f64);
        let mut a = -h.clone();
        for i in 0..n {
            a[(i, i)] += center + w;
        }
        p += a.try_inverse()? * (w / nodes as f64);
    }
    Some(p)
}
