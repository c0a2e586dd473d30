//! Bloch eigenfunctions, adjoint eigenfunctions and norming constants.
//!
//! Functions are sampled on `x_j = j / N`, `j = 0..=N`, with `N` the shooting grid size.
//! Inner products use the trapezoid rule over one period, which is spectrally accurate
//! here because every integrand is periodic.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundsol::FundamentalPair;
use crate::hill::{BlochBand, HillOperator};
use crate::quad;

/// Smallest `|α|` for which the biorthogonal element is formed.
pub const ALPHA_UNDERFLOW: f64 = 1e-13;

/// Conventions fixed by this module, recorded alongside every triple.
pub const PHASE_CONVENTION: &str =
    "largest Fourier coefficient of e^{-itx}psi real positive; (f,g)=int f conj(g); X=psi_star/conj(alpha)";

/// Unnormalized Bloch solution `Φ_t(x, λ)` and its derivative.
#[derive(Debug, Clone)]
pub struct BlochFunction {
    pub t: f64,
    /// Eigenvalue in original units.
    pub lambda: Complex64,
    pub values: Vec<Complex64>,
    pub derivatives: Vec<Complex64>,
}

impl BlochFunction {
    /// Relative defect in `y(1) = e^{it} y(0)`, `y'(1) = e^{it} y'(0)`.
    pub fn quasi_periodicity_residual(&self) -> f64 {
        let m = Complex64::cis(self.t);
        let n = self.values.len() - 1;
        let scale_v = self.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale_d = self.derivatives.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let rv = (self.values[n] - m * self.values[0]).norm() / scale_v.max(f64::MIN_POSITIVE);
        let rd = (self.derivatives[n] - m * self.derivatives[0]).norm() / scale_d.max(f64::MIN_POSITIVE);
        rv.max(rd)
    }
}

/// Eigenfunction, adjoint eigenfunction, norming constant and biorthogonal element.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenTriple {
    pub t: f64,
    pub lambda: Complex64,
    pub psi: Vec<Complex64>,
    pub psi_star: Vec<Complex64>,
    pub alpha: Complex64,
    pub x_elem: Vec<Complex64>,
    pub phase_convention: String,
}

impl EigenTriple {
    pub fn projection_norm(&self) -> f64 {
        1.0 / self.alpha.norm()
    }

    /// `(f, X)` for `f` sampled on the same grid.
    pub fn coefficient(&self, f: &[Complex64]) -> Complex64 {
        let n = self.psi.len() - 1;
        quad::inner(&f[..n], &self.x_elem[..n])
    }
}

fn check_eigenvalue(op: &HillOperator, t: f64, lambda: Complex64) -> Result<()> {
    let f = op.discriminant(lambda)?;
    let residual = (f - 2.0 * t.cos()).norm();
    let tol = 1e3 * op.config().root_tolerance;
    if residual > tol {
        return Err(Error::InvalidArgument(format!(
            "lambda = {lambda} is not a Bloch eigenvalue at t = {t} (|F - 2cos t| = {residual:.3e})"
        )));
    }
    Ok(())
}

fn combine(pair: &FundamentalPair, a: Complex64, b: Complex64, t: f64, lambda: Complex64) -> BlochFunction {
    BlochFunction {
        t,
        lambda,
        values: pair
            .theta
            .iter()
            .zip(&pair.phi)
            .map(|(th, ph)| a * th + b * ph)
            .collect(),
        derivatives: pair
            .dtheta
            .iter()
            .zip(&pair.dphi)
            .map(|(th, ph)| a * th + b * ph)
            .collect(),
    }
}

/// `Φ_t(x,λ) = φ(1,λ) θ(x,λ) + (e^{it} − θ(1,λ)) φ(x,λ)`.
pub fn bloch_function(op: &HillOperator, t: f64, lambda: Complex64) -> Result<BlochFunction> {
    check_eigenvalue(op, t, lambda)?;
    let pair = op.solver().pair(op.potential().to_internal(lambda))?;
    let m = pair.monodromy;
    let a = m[0][1];
    let b = Complex64::cis(t) - m[0][0];
    let size = matrix_scale(&pair);
    if a.norm().max(b.norm()) <= 1e-9 * size {
        return Err(Error::DegenerateFormula { t, lambda });
    }
    Ok(combine(&pair, a, b, t, lambda))
}

fn matrix_scale(pair: &FundamentalPair) -> f64 {
    let m = pair.monodromy;
    1.0 + m.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Bloch solution from whichever eigenvector formula of the monodromy matrix is better
/// conditioned; the second is `(e^{it} − φ'(1)) θ + θ'(1) φ`. When both vanish the
/// eigenspace is two-dimensional and `θ` is returned.
fn stable_bloch_function(op: &HillOperator, t: f64, lambda: Complex64) -> Result<BlochFunction> {
    check_eigenvalue(op, t, lambda)?;
    let pair = op.solver().pair(op.potential().to_internal(lambda))?;
    let m = pair.monodromy;
    let mu = Complex64::cis(t);
    let (a1, b1) = (m[0][1], mu - m[0][0]);
    let (a2, b2) = (mu - m[1][1], m[1][0]);
    // Columns of the solution space have different units; compare on the λ-free scale.
    let w = 1.0 + op.potential().to_internal(lambda).norm().sqrt();
    let n1 = (a1 * w).norm().max(b1.norm());
    let n2 = a2.norm().max((b2 / w).norm());
    let size = matrix_scale(&pair);
    if n1.max(n2) <= 1e-9 * size {
        // Monodromy is e^{it} I: every solution is a Bloch solution. Take θ.
        return Ok(combine(
            &pair,
            Complex64::new(1.0, 0.0),
            Complex64::default(),
            t,
            lambda,
        ));
    }
    Ok(if n1 >= n2 {
        combine(&pair, a1, b1, t, lambda)
    } else {
        combine(&pair, a2, b2, t, lambda)
    })
}

/// Scale to unit norm and rotate so the dominant Fourier mode is real positive.
fn normalize(values: &[Complex64], t: f64) -> Vec<Complex64> {
    let n = values.len() - 1;
    let periodic: Vec<Complex64> = (0..n)
        .map(|j| values[j] * Complex64::cis(-t * j as f64 / n as f64))
        .collect();
    let coeffs = quad::fourier_coefficients(&periodic);
    let dominant = coeffs
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let norm = quad::norm(&values[..n]);
    let factor = dominant.conj() / (dominant.norm() * norm);
    values.iter().map(|z| z * factor).collect()
}

/// `Ψ_{n,t}`: the Bloch solution at unit norm with the phase rule applied.
pub fn normalized_eigenfunction(op: &HillOperator, t: f64, lambda: Complex64) -> Result<Vec<Complex64>> {
    let phi = stable_bloch_function(op, t, lambda)?;
    Ok(normalize(&phi.values, t))
}

/// `Ψ*_{n,t}`: normalized eigenfunction of the adjoint problem `(conj q, conj λ, t)`.
pub fn adjoint_eigenfunction(op: &HillOperator, t: f64, lambda: Complex64) -> Result<Vec<Complex64>> {
    normalized_eigenfunction(&op.adjoint(), t, lambda.conj())
}

/// `α_n(t) = (Ψ_{n,t}, Ψ*_{n,t})`.
pub fn norming_constant(op: &HillOperator, t: f64, lambda: Complex64) -> Result<Complex64> {
    let psi = normalized_eigenfunction(op, t, lambda)?;
    let psi_star = adjoint_eigenfunction(op, t, lambda)?;
    let n = psi.len() - 1;
    Ok(quad::inner(&psi[..n], &psi_star[..n]))
}

pub fn eigen_triple(op: &HillOperator, t: f64, lambda: Complex64) -> Result<EigenTriple> {
    let psi = normalized_eigenfunction(op, t, lambda)?;
    let psi_star = adjoint_eigenfunction(op, t, lambda)?;
    let n = psi.len() - 1;
    let alpha = quad::inner(&psi[..n], &psi_star[..n]);
    if alpha.norm() < ALPHA_UNDERFLOW {
        return Err(Error::AlphaUnderflow { alpha: alpha.norm() });
    }
    let scale = alpha.conj().inv();
    let x_elem = psi_star.iter().map(|z| z * scale).collect();
    Ok(EigenTriple {
        t,
        lambda,
        psi,
        psi_star,
        alpha,
        x_elem,
        phase_convention: PHASE_CONVENTION.to_string(),
    })
}

/// `X_{n,t} = Ψ*_{n,t} / conj(α_n(t))`, so that `(Ψ_{n,t}, X_{n,t}) = 1`.
pub fn biorthogonal_element(op: &HillOperator, t: f64, lambda: Complex64) -> Result<Vec<Complex64>> {
    Ok(eigen_triple(op, t, lambda)?.x_elem)
}

/// Norm of the rank-one projection `f ↦ (f, X) Ψ`, equal to `1 / |α|`.
pub fn projection_norm(op: &HillOperator, t: f64, lambda: Complex64) -> Result<f64> {
    let alpha = norming_constant(op, t, lambda)?;
    if alpha.norm() < ALPHA_UNDERFLOW {
        return Err(Error::AlphaUnderflow { alpha: alpha.norm() });
    }
    Ok(1.0 / alpha.norm())
}

/// RMS of `−Ψ'' + qΨ − λΨ` (original units) with spectral differentiation.
pub fn eigen_residual(op: &HillOperator, t: f64, lambda: Complex64, psi: &[Complex64]) -> f64 {
    let q = op.potential();
    let n = psi.len() - 1;
    let periodic: Vec<Complex64> = (0..n)
        .map(|j| psi[j] * Complex64::cis(-t * j as f64 / n as f64))
        .collect();
    let mut coeffs = quad::fourier_coefficients(&periodic);
    for (k, c) in coeffs.iter_mut().enumerate() {
        let w = 2.0 * PI * quad::wavenumber(k, n) as f64 + t;
        *c *= w * w;
    }
    // Inverse transform of the multiplied coefficients gives e^{-itx}(−Ψ'').
    let mut buf = coeffs;
    rustfft::FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let lambda_int = q.to_internal(lambda);
    let sum: f64 = (0..n)
        .map(|j| {
            let x = j as f64 / n as f64;
            let minus_d2 = buf[j] * Complex64::cis(t * x);
            (minus_d2 + (q.internal_value(x) - lambda_int) * psi[j]).norm_sqr()
        })
        .sum();
    (sum / n as f64).sqrt() / q.scale()
}

/// One row of an α-curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSample {
    pub n: usize,
    pub t: f64,
    pub alpha: Complex64,
    pub projection_norm: f64,
}

/// `α_n(t)` along a traced band. Zero `α` gives an infinite projection norm.
pub fn alpha_curve(op: &HillOperator, band: &BlochBand) -> Result<Vec<AlphaSample>> {
    band.t_grid
        .par_iter()
        .zip(band.lambdas.par_iter())
        .map(|(&t, &lambda)| {
            let alpha = norming_constant(op, t, lambda)?;
            Ok(AlphaSample {
                n: band.band_index,
                t,
                alpha,
                projection_norm: 1.0 / alpha.norm(),
            })
        })
        .collect()
}

/// CSV with columns `n, t, re_alpha, im_alpha, abs_alpha, projection_norm`.
pub fn write_alpha_csv<W: Write>(samples: &[AlphaSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "t", "re_alpha", "im_alpha", "abs_alpha", "projection_norm"])?;
    for s in samples {
        w.write_record([
            s.n.to_string(),
            s.t.to_string(),
            s.alpha.re.to_string(),
            s.alpha.im.to_string(),
            s.alpha.norm().to_string(),
            s.projection_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PeriodicPotential;

    fn free() -> HillOperator {
        HillOperator::with_defaults(&PeriodicPotential::zero()).unwrap()
    }

    #[test]
    fn free_bloch_wave() {
        let op = free();
        let t = 1.0;
        let psi = normalized_eigenfunction(&op, t, Complex64::new(1.0, 0.0)).unwrap();
        let n = psi.len() - 1;
        for j in (0..=n).step_by(97) {
            let x = j as f64 / n as f64;
            assert!((psi[j] - Complex64::cis(t * x)).norm() < 1e-10, "x={x}");
        }
        let alpha = norming_constant(&op, t, Complex64::new(1.0, 0.0)).unwrap();
        assert!((alpha - 1.0).norm() < 1e-10);
    }

    #[test]
    fn second_free_wave_runs_backwards() {
        let op = free();
        let t: f64 = 0.6;
        let w = 2.0 * PI - t;
        let phi = bloch_function(&op, t, Complex64::new(w * w, 0.0)).unwrap();
        let n = phi.values.len() - 1;
        let ratio = phi.values[n / 3] / phi.values[0];
        let x = (n / 3) as f64 / n as f64;
        assert!((ratio - Complex64::cis(-w * x)).norm() < 1e-9);
        assert!(phi.quasi_periodicity_residual() < 1e-10);
    }

    #[test]
    fn rejects_non_eigenvalue() {
        let op = free();
        assert!(matches!(
            bloch_function(&op, 1.0, Complex64::new(2.0, 0.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn alpha_csv_columns() {
        let s = AlphaSample {
            n: 1,
            t: 0.5,
            alpha: Complex64::new(0.6, 0.8),
            projection_norm: 1.0,
        };
        let mut buf = Vec::new();
        write_alpha_csv(&[s], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "n,t,re_alpha,im_alpha,abs_alpha,projection_norm"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("1,0.5,0.6,0.8,1,"));
    }
}
