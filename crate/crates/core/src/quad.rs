//! Quadrature rules shared by the spectral modules.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A Gauss–Legendre panel mapped onto `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Panel {
    pub fn new(lo: f64, hi: f64, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        Self {
            lo,
            hi,
            nodes: x.iter().map(|&u| mid + half * u).collect(),
            weights: w.iter().map(|&v| half * v).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Mean over one period of samples of a 1-periodic function (trapezoid rule).
pub fn periodic_mean(values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() / values.len() as f64
}

/// `∫₀¹ f conj(g)` for 1-periodic products sampled at `j / n`, `j < n`.
pub fn inner(f: &[Complex64], g: &[Complex64]) -> Complex64 {
    debug_assert_eq!(f.len(), g.len());
    f.iter().zip(g).map(|(a, b)| a * b.conj()).sum::<Complex64>() / f.len() as f64
}

/// `∫₀¹ f g` without conjugation.
pub fn bilinear(f: &[Complex64], g: &[Complex64]) -> Complex64 {
    debug_assert_eq!(f.len(), g.len());
    f.iter().zip(g).map(|(a, b)| a * b).sum::<Complex64>() / f.len() as f64
}

pub fn norm(f: &[Complex64]) -> f64 {
    (f.iter().map(|a| a.norm_sqr()).sum::<f64>() / f.len() as f64).sqrt()
}

/// Discrete Fourier coefficients `c_k = mean_j u_j e^{-2πi k j/n}` for `k` in FFT order.
pub fn fourier_coefficients(values: &[Complex64]) -> Vec<Complex64> {
    let mut buf = values.to_vec();
    let mut planner = rustfft::FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    let scale = 1.0 / values.len() as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Signed wavenumber of FFT bin `k` out of `n`.
pub fn wavenumber(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
