//! Fundamental solutions of `-y'' + q y = λ y` on the unit period.
//!
//! The first-order system `Y' = A(x) Y`, `A = [[0, 1], [q - λ, 0]]`, is
//! advanced with the fourth-order Magnus scheme on a uniform grid. Every step
//! multiplies by the exponential of a traceless 2×2 matrix, so the computed
//! monodromy keeps `det = 1` up to rounding, and the scheme is exact when `q`
//! is constant.
//!
//! All `lambda` arguments here are in unit-period (internal) units.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::potential::PeriodicPotential;

pub const DEFAULT_GRID_SIZE: usize = 2048;
pub const DEFAULT_WRONSKIAN_TOLERANCE: f64 = 1e-10;

/// Row-major 2×2 complex matrix.
pub type Mat2 = [[Complex64; 2]; 2];

const IDENTITY: Mat2 = [
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
];

pub(crate) fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn det(m: &Mat2) -> Complex64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Sampled potential and step rule for one grid.
#[derive(Debug, Clone)]
pub struct FundSolver {
    grid_size: usize,
    step: f64,
    /// Internal potential at the two Gauss nodes of every step.
    q_lo: Vec<Complex64>,
    q_hi: Vec<Complex64>,
    tolerance: f64,
}

impl FundSolver {
    pub fn new(q: &PeriodicPotential, grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid_size must be at least 2, got {grid_size}"
            )));
        }
        let step = 1.0 / grid_size as f64;
        let offset = 3f64.sqrt() / 6.0;
        let (q_lo, q_hi) = (0..grid_size)
            .map(|j| {
                let x = j as f64 * step;
                (
                    q.internal_value(x + (0.5 - offset) * step),
                    q.internal_value(x + (0.5 + offset) * step),
                )
            })
            .unzip();
        Ok(Self {
            grid_size,
            step,
            q_lo,
            q_hi,
            tolerance: DEFAULT_WRONSKIAN_TOLERANCE,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// Solver for `conj(q)`, the potential of the adjoint problem.
    pub fn adjoint(&self) -> Self {
        Self {
            grid_size: self.grid_size,
            step: self.step,
            q_lo: self.q_lo.iter().map(|c| c.conj()).collect(),
            q_hi: self.q_hi.iter().map(|c| c.conj()).collect(),
            tolerance: self.tolerance,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Propagator over grid cell `j`.
    fn step_matrix(&self, j: usize, lambda: Complex64) -> Mat2 {
        let h = self.step;
        let w_lo = self.q_lo[j] - lambda;
        let w_hi = self.q_hi[j] - lambda;
        let c = (3f64.sqrt() * h * h / 12.0) * (self.q_lo[j] - self.q_hi[j]);
        let lower = 0.5 * h * (w_lo + w_hi);
        // Ω = [[c, h], [lower, -c]] and Ω² = s² I.
        let s2 = c * c + h * lower;
        let (ch, sh_over_s) = if s2.norm() < 1e-8 {
            (
                1.0 + s2 * (0.5 + s2 * (1.0 / 24.0 + s2 / 720.0)),
                1.0 + s2 * (1.0 / 6.0 + s2 * (1.0 / 120.0 + s2 / 5040.0)),
            )
        } else {
            let s = s2.sqrt();
            (s.cosh(), s.sinh() / s)
        };
        [
            [ch + sh_over_s * c, sh_over_s * h],
            [sh_over_s * lower, ch - sh_over_s * c],
        ]
    }

    /// Monodromy matrix `[[θ(1), φ(1)], [θ'(1), φ'(1)]]`.
    pub fn monodromy(&self, lambda: Complex64) -> Result<Mat2> {
        let mut m = IDENTITY;
        for j in 0..self.grid_size {
            m = mat_mul(&self.step_matrix(j, lambda), &m);
        }
        let residual = (det(&m) - 1.0).norm();
        if !(residual <= self.tolerance) {
            return Err(Error::AccuracyFailure {
                residual,
                tolerance: self.tolerance,
            });
        }
        Ok(m)
    }

    /// Hill discriminant `F(λ) = θ(1) + φ'(1)`.
    pub fn discriminant(&self, lambda: Complex64) -> Result<Complex64> {
        let m = self.monodromy(lambda)?;
        Ok(m[0][0] + m[1][1])
    }

    /// Both fundamental solutions sampled on the grid `x_j = j / grid_size`, `j = 0..=grid_size`.
    pub fn pair(&self, lambda: Complex64) -> Result<FundamentalPair> {
        let n = self.grid_size;
        let mut theta = Vec::with_capacity(n + 1);
        let mut dtheta = Vec::with_capacity(n + 1);
        let mut phi = Vec::with_capacity(n + 1);
        let mut dphi = Vec::with_capacity(n + 1);
        let mut m = IDENTITY;
        let mut residual: f64 = 0.0;
        let mut push = |m: &Mat2| {
            theta.push(m[0][0]);
            dtheta.push(m[1][0]);
            phi.push(m[0][1]);
            dphi.push(m[1][1]);
        };
        push(&m);
        for j in 0..n {
            m = mat_mul(&self.step_matrix(j, lambda), &m);
            residual = residual.max((det(&m) - 1.0).norm());
            push(&m);
        }
        if !(residual <= self.tolerance) {
            return Err(Error::AccuracyFailure {
                residual,
                tolerance: self.tolerance,
            });
        }
        Ok(FundamentalPair {
            lambda,
            theta,
            dtheta,
            phi,
            dphi,
            monodromy: m,
            wronskian_residual: residual,
        })
    }
}

/// `θ`, `φ` and their derivatives on a uniform grid of `[0, 1]`.
#[derive(Debug, Clone)]
pub struct FundamentalPair {
    pub lambda: Complex64,
    pub theta: Vec<Complex64>,
    pub dtheta: Vec<Complex64>,
    pub phi: Vec<Complex64>,
    pub dphi: Vec<Complex64>,
    pub monodromy: Mat2,
    pub wronskian_residual: f64,
}

impl FundamentalPair {
    pub fn grid_size(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 / self.grid_size() as f64
    }

    pub fn discriminant(&self) -> Complex64 {
        self.monodromy[0][0] + self.monodromy[1][1]
    }

    /// `dF/dλ = −∫₀¹ [φ(1)θ² + (φ'(1) − θ(1))θφ − θ'(1)φ²] dx`, by Simpson's rule on the
    /// sample grid (trapezoid on an odd grid).
    pub fn discriminant_derivative(&self) -> Complex64 {
        let [[th1, ph1], [dth1, dph1]] = self.monodromy;
        let n = self.grid_size();
        let integrand = |j: usize| {
            let (a, b) = (self.theta[j], self.phi[j]);
            ph1 * a * a + (dph1 - th1) * a * b - dth1 * b * b
        };
        let h = 1.0 / n as f64;
        let sum = if n.is_multiple_of(2) {
            (0..=n)
                .map(|j| {
                    let w = if j == 0 || j == n {
                        1.0
                    } else if j % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    integrand(j) * w
                })
                .sum::<Complex64>()
                * (h / 3.0)
        } else {
            (0..=n)
                .map(|j| integrand(j) * if j == 0 || j == n { 0.5 } else { 1.0 })
                .sum::<Complex64>()
                * h
        };
        -sum
    }

    /// Debug dump with columns `x, Re θ, Im θ, Re θ', Im θ', Re φ, Im φ, Re φ', Im φ'`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "x,re_theta,im_theta,re_dtheta,im_dtheta,re_phi,im_phi,re_dphi,im_dphi"
        )?;
        for j in 0..self.theta.len() {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                self.x(j),
                self.theta[j].re,
                self.theta[j].im,
                self.dtheta[j].re,
                self.dtheta[j].im,
                self.phi[j].re,
                self.phi[j].im,
                self.dphi[j].re,
                self.dphi[j].im
            )?;
        }
        Ok(())
    }
}

/// Fundamental pair of `q` at internal eigenvalue parameter `lambda`.
pub fn fundamental_pair(q: &PeriodicPotential, lambda: Complex64, grid_size: usize) -> Result<FundamentalPair> {
    FundSolver::new(q, grid_size)?.pair(lambda)
}

/// Monodromy matrix on the default grid.
pub fn monodromy(q: &PeriodicPotential, lambda: Complex64) -> Result<Mat2> {
    FundSolver::new(q, DEFAULT_GRID_SIZE)?.monodromy(lambda)
}

/// `cos(√λ)` and `sin(√λ)/√λ`, entire in `λ`, for the free-equation oracles.
pub fn free_solutions(lambda: Complex64, x: f64) -> (Complex64, Complex64) {
    let k = lambda.sqrt();
    if k.norm() < 1e-6 {
        let z = lambda * x * x;
        return (1.0 - z / 2.0 + z * z / 24.0, x * (1.0 - z / 6.0 + z * z / 120.0));
    }
    ((k * x).cos(), (k * x).sin() / k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn initial_conditions_are_exact() {
        let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0));
        let pair = fundamental_pair(&q, c(5.0, 1.0), 64).unwrap();
        assert_eq!(pair.theta[0], c(1.0, 0.0));
        assert_eq!(pair.dtheta[0], c(0.0, 0.0));
        assert_eq!(pair.phi[0], c(0.0, 0.0));
        assert_eq!(pair.dphi[0], c(1.0, 0.0));
    }

    #[test]
    fn discriminant_derivative_matches_free_closed_form() {
        for lambda in [c(3.0, 0.0), c(20.0, -4.0), c(-2.0, 1.5)] {
            let pair = fundamental_pair(&PeriodicPotential::zero(), lambda, 1024).unwrap();
            let k = lambda.sqrt();
            let exact = -k.sin() / k;
            assert!((pair.discriminant_derivative() - exact).norm() < 1e-9, "{lambda}");
        }
    }

    #[test]
    fn zero_potential_at_zero_lambda() {
        let pair = fundamental_pair(&PeriodicPotential::zero(), c(0.0, 0.0), 128).unwrap();
        for j in 0..=128 {
            let x = pair.x(j);
            assert!((pair.theta[j] - 1.0).norm() < 1e-14);
            assert!((pair.phi[j] - x).norm() < 1e-14);
        }
        let m = pair.monodromy;
        assert!((m[0][0] - 1.0).norm() < 1e-14);
        assert!((m[0][1] - 1.0).norm() < 1e-14);
        assert!(m[1][0].norm() < 1e-14);
        assert!((m[1][1] - 1.0).norm() < 1e-14);
    }

    #[test]
    fn zero_potential_monodromy_at_pi_squared() {
        let m = monodromy(&PeriodicPotential::zero(), c(PI * PI, 0.0)).unwrap();
        assert!((m[0][0] + 1.0).norm() < 1e-12);
        assert!(m[0][1].norm() < 1e-12);
        assert!(m[1][0].norm() < 1e-11);
        assert!((m[1][1] + 1.0).norm() < 1e-12);
        let m = monodromy(&PeriodicPotential::zero(), c(4.0 * PI * PI, 0.0)).unwrap();
        assert!((m[0][0] - 1.0).norm() < 1e-12);
        assert!((m[1][1] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn free_solutions_match_closed_form() {
        let lambda = c(30.0, -4.0);
        let pair = fundamental_pair(&PeriodicPotential::zero(), lambda, 512).unwrap();
        for j in (0..=512).step_by(37) {
            let (th, ph) = free_solutions(lambda, pair.x(j));
            assert!((pair.theta[j] - th).norm() < 1e-12);
            assert!((pair.phi[j] - ph).norm() < 1e-12);
        }
    }

    #[test]
    fn optical_determinant_is_one() {
        let q = PeriodicPotential::optical(0.5).unwrap();
        for lambda in [6.0 / (PI * PI), 6.0 * PI * PI] {
            let m = monodromy(&q, c(lambda, 0.0)).unwrap();
            assert!((det(&m) - 1.0).norm() < 1e-10);
        }
    }

    #[test]
    fn tiny_grid_is_rejected() {
        assert!(FundSolver::new(&PeriodicPotential::zero(), 1).is_err());
    }

    #[test]
    fn tight_tolerance_reports_accuracy_failure() {
        let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0));
        let solver = FundSolver::new(&q, 64).unwrap().with_tolerance(0.0);
        match solver.monodromy(c(-3000.0, 0.0)) {
            Err(Error::AccuracyFailure { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected accuracy failure, got {other:?}"),
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let pair = fundamental_pair(&PeriodicPotential::zero(), c(1.0, 0.0), 4).unwrap();
        let mut buf = Vec::new();
        pair.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("x,re_theta"));
    }
}
