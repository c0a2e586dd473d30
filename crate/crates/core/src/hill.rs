//! Hill discriminant, Bloch eigenvalues and band continuation.
//!
//! All eigenvalues crossing this API are in original-period units; the conversion to the
//! internal period-1 problem happens here.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundsol::{FundSolver, DEFAULT_GRID_SIZE};
use crate::galerkin::{self, sort_by_magnitude};
use crate::potential::PeriodicPotential;

pub const DEFAULT_ROOT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MERGE_FACTOR: f64 = 1e-6;
pub const DEFAULT_GALERKIN_TRUNCATION: usize = 25;
/// Quasimomentum at which bands are labelled by magnitude.
pub const T_REF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HillConfig {
    pub grid_size: usize,
    pub root_tolerance: f64,
    /// Roots closer than `merge_factor · (1 + |λ|)` are one multiple root.
    pub merge_factor: f64,
    /// Bands closer than `collision_factor · (1 + |λ|)` are flagged as colliding.
    pub collision_factor: f64,
    pub galerkin_truncation: usize,
    /// Allowed `|Δλ| / ((1 + |λ|) |Δt|)` between consecutive band samples.
    pub jump_factor: f64,
    pub max_halvings: u32,
    pub max_newton: usize,
}

impl Default for HillConfig {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            root_tolerance: DEFAULT_ROOT_TOLERANCE,
            merge_factor: DEFAULT_MERGE_FACTOR,
            collision_factor: 1e-4,
            galerkin_truncation: DEFAULT_GALERKIN_TRUNCATION,
            jump_factor: 8.0,
            max_halvings: 14,
            max_newton: 60,
        }
    }
}

/// Sign selecting the branch of `p(λ) = ±√(4 − F²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// A root of `F(λ) = 2cos t` with its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochEigenvalue {
    pub lambda: Complex64,
    pub multiplicity: usize,
    pub residual: f64,
}

/// A band `t ↦ λ_n(t)` sampled on a quasimomentum grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochBand {
    /// Position in the magnitude ordering at `T_REF`, starting from 0.
    pub band_index: usize,
    /// Index `k` of the free eigenvalue `(2πk + T_REF)²` nearest to the band at `T_REF`.
    pub free_label: i64,
    pub t_grid: Vec<f64>,
    pub lambdas: Vec<Complex64>,
    pub residuals: Vec<f64>,
    pub collision_flags: Vec<bool>,
}

#[derive(Serialize)]
struct BandRow {
    n: usize,
    t: f64,
    re: f64,
    im: f64,
    residual: f64,
    collision_flag: bool,
}

impl BlochBand {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    /// Eigenvalue at the grid point closest to `t`.
    pub fn at(&self, t: f64) -> Option<Complex64> {
        self.t_grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| self.lambdas[i])
    }

    pub fn has_collision(&self) -> bool {
        self.collision_flags.iter().any(|&f| f)
    }
}

/// Write bands as CSV with columns `n, t, re_lambda, im_lambda, residual, collision_flag`.
pub fn write_bands_csv<W: Write>(bands: &[BlochBand], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["n", "t", "re_lambda", "im_lambda", "residual", "collision_flag"])?;
    for band in bands {
        for i in 0..band.len() {
            w.serialize(BandRow {
                n: band.band_index,
                t: band.t_grid[i],
                re: band.lambdas[i].re,
                im: band.lambdas[i].im,
                residual: band.residuals[i],
                collision_flag: band.collision_flags[i],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `n` uniform points on `(−π, π]`.
pub fn uniform_t_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect()
}

/// 512 uniform points on `(−π, π]`, refined 8× within four cells of `t = 0` and `t = π`.
pub fn default_t_grid() -> Vec<f64> {
    refined_t_grid(512, 8, 4)
}

pub fn refined_t_grid(n: usize, factor: usize, cells: usize) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    let near = |t: f64| {
        let d = t.abs().min(PI - t.abs());
        d < cells as f64 * h - 1e-12
    };
    let mut grid = Vec::new();
    let base = uniform_t_grid(n);
    let mut prev = -PI;
    for &t in &base {
        if near(prev) || near(t) {
            for s in 1..factor {
                grid.push(prev + h * s as f64 / factor as f64);
            }
        }
        grid.push(t);
        prev = t;
    }
    grid
}

/// The operator `L(q)` together with its shooting solver and numerical settings.
#[derive(Debug, Clone)]
pub struct HillOperator {
    q: PeriodicPotential,
    solver: FundSolver,
    config: HillConfig,
}

impl HillOperator {
    pub fn new(q: &PeriodicPotential, config: HillConfig) -> Result<Self> {
        if !(config.root_tolerance > 0.0) || !(config.merge_factor > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(Self {
            q: q.clone(),
            solver: FundSolver::new(q, config.grid_size)?,
            config,
        })
    }

    pub fn with_defaults(q: &PeriodicPotential) -> Result<Self> {
        Self::new(q, HillConfig::default())
    }

    pub fn potential(&self) -> &PeriodicPotential {
        &self.q
    }

    pub fn solver(&self) -> &FundSolver {
        &self.solver
    }

    pub fn config(&self) -> &HillConfig {
        &self.config
    }

    /// The operator with potential `conj(q)`, whose Bloch problems are the adjoints.
    pub fn adjoint(&self) -> Self {
        Self {
            q: self.q.conjugate(),
            solver: self.solver.adjoint(),
            config: self.config.clone(),
        }
    }

    pub fn merge_tolerance(&self, lambda: Complex64) -> f64 {
        self.config.merge_factor * (1.0 + lambda.norm())
    }

    pub fn collision_tolerance(&self, lambda: Complex64) -> f64 {
        self.config.collision_factor * (1.0 + lambda.norm())
    }

    pub fn discriminant(&self, lambda: Complex64) -> Result<Complex64> {
        self.solver.discriminant(self.q.to_internal(lambda))
    }

    /// `dF/dλ` by central differences (original units).
    pub fn discriminant_derivative(&self, lambda: Complex64) -> Result<Complex64> {
        let z = self.q.to_internal(lambda);
        Ok(self.internal_derivative(z)? * self.q.scale())
    }

    fn internal_derivative(&self, z: Complex64) -> Result<Complex64> {
        let h = 1e-6 * (1.0 + z.norm());
        let fp = self.solver.discriminant(z + h)?;
        let fm = self.solver.discriminant(z - h)?;
        Ok((fp - fm) / (2.0 * h))
    }

    /// `p(λ) = ±√(4 − F(λ)²)` with the principal square root.
    pub fn p_function(&self, lambda: Complex64, branch: Branch) -> Result<Complex64> {
        let f = self.discriminant(lambda)?;
        Ok(branch.sign() * (4.0 - f * f).sqrt())
    }

    /// Newton iteration on `F(λ) − 2cos t` from `seed`; returns the root and its residual.
    pub fn polish(&self, t: f64, seed: Complex64) -> Result<(Complex64, f64)> {
        let target = Complex64::from(2.0 * t.cos());
        let mut z = self.q.to_internal(seed);
        let mut g = self.solver.discriminant(z)? - target;
        for iter in 0..self.config.max_newton {
            if g.norm() == 0.0 {
                break;
            }
            let d = self.internal_derivative(z)?;
            if d.norm() == 0.0 || !d.is_finite() {
                break;
            }
            let mut step = g / d;
            // Next to a near-double root |F − 2cos t| ~ |λ − λ₁||λ − λ₂| is tiny well before
            // λ is accurate, so a small residual also needs a small proposed step. At an
            // exact double root the step is pure noise of order √(noise), and that is accepted.
            // The first step is always tried, so a Galerkin seed is refined by shooting
            // rather than passed through.
            if iter > 0 && g.norm() < 1e-3 * self.config.root_tolerance && step.norm() < 1e-6 * (1.0 + z.norm()) {
                break;
            }
            let mut improved = false;
            for _ in 0..8 {
                let zn = z - step;
                let gn = self.solver.discriminant(zn)? - target;
                if gn.norm() < g.norm() {
                    z = zn;
                    g = gn;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved || step.norm() < 1e-15 * (1.0 + z.norm()) {
                break;
            }
        }
        let residual = g.norm();
        if residual < self.config.root_tolerance {
            Ok((self.q.to_user(z), residual))
        } else {
            Err(Error::NoConvergence { t, seed, residual })
        }
    }

    /// A root of multiplicity two or more is also a zero of `F'`, which is simple there.
    /// Newton on `F'` pins it to rounding accuracy where Newton on `F − 2cos t` stalls at
    /// the square root of the shooting noise. The result is kept only if it stays inside
    /// the merge disc and is still a root.
    fn refine_multiple(&self, t: f64, lambda: Complex64) -> Result<Option<(Complex64, f64)>> {
        let start = self.q.to_internal(lambda);
        let radius = self.merge_tolerance(lambda);
        let derivative = |z: Complex64| -> Result<Complex64> { Ok(self.solver.pair(z)?.discriminant_derivative()) };
        let mut z = start;
        for _ in 0..8 {
            let h = 1e-4 * (1.0 + z.norm());
            let d = derivative(z)?;
            let dd = (derivative(z + h)? - derivative(z - h)?) / (2.0 * h);
            if dd.norm() == 0.0 || !dd.is_finite() {
                return Ok(None);
            }
            let step = d / dd;
            z -= step;
            if (self.q.to_user(z) - lambda).norm() > radius {
                return Ok(None);
            }
            if step.norm() < 1e-14 * (1.0 + z.norm()) {
                break;
            }
        }
        let residual = (self.solver.discriminant(z)? - 2.0 * t.cos()).norm();
        Ok((residual < self.config.root_tolerance).then(|| (self.q.to_user(z), residual)))
    }

    pub fn galerkin_eigenvalues(&self, t: f64, count: usize) -> Vec<Complex64> {
        galerkin::galerkin_eigenvalues(&self.q, t, self.truncation_for(count))
    }

    /// Galerkin truncation used when `count` eigenvalues are needed.
    pub fn truncation_for(&self, count: usize) -> usize {
        self.config
            .galerkin_truncation
            .max(count + 8)
            .max(self.q.max_harmonic())
    }

    /// Distinct roots of `F(λ) = 2cos t` covering the `count` eigenvalues of smallest magnitude.
    pub fn bloch_spectrum(&self, t: f64, count: usize) -> Result<Vec<BlochEigenvalue>> {
        if count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        let all = self.galerkin_eigenvalues(t, count);
        let cutoff = all[count - 1];
        let seeds: Vec<Complex64> = all
            .iter()
            .copied()
            .take_while(|z| z.norm() <= cutoff.norm() + self.merge_tolerance(cutoff))
            .collect();
        let polished = seeds.iter().map(|&s| self.polish(t, s)).collect::<Result<Vec<_>>>()?;

        let mut roots: Vec<BlochEigenvalue> = Vec::new();
        for (lambda, residual) in polished {
            match roots
                .iter_mut()
                .find(|r| (r.lambda - lambda).norm() <= self.merge_tolerance(lambda))
            {
                Some(r) if residual < r.residual => {
                    r.lambda = lambda;
                    r.residual = residual;
                }
                Some(_) => {}
                None => roots.push(BlochEigenvalue {
                    lambda,
                    multiplicity: 0,
                    residual,
                }),
            }
        }
        // Multiplicity is the number of oracle eigenvalues in the root's merge disc.
        let mut found = 0;
        for r in &mut roots {
            r.multiplicity = all
                .iter()
                .filter(|z| (**z - r.lambda).norm() <= self.merge_tolerance(r.lambda))
                .count();
            found += r.multiplicity;
            if r.multiplicity > 1 {
                if let Some((lambda, residual)) = self.refine_multiple(t, r.lambda)? {
                    r.lambda = lambda;
                    r.residual = residual;
                }
            }
        }
        if found != seeds.len() {
            return Err(Error::MissedRoot {
                t,
                found,
                expected: seeds.len(),
            });
        }
        roots.sort_by(|a, b| a.lambda.norm().total_cmp(&b.lambda.norm()));
        Ok(roots)
    }

    /// The `count` Bloch eigenvalues of smallest magnitude, repeated by multiplicity.
    pub fn bloch_eigenvalues(&self, t: f64, count: usize) -> Result<Vec<Complex64>> {
        let spectrum = self.bloch_spectrum(t, count)?;
        let mut out: Vec<Complex64> = spectrum
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.lambda, r.multiplicity))
            .collect();
        sort_by_magnitude(&mut out);
        out.truncate(count);
        Ok(out)
    }

    /// Continue band `n` (magnitude order at `T_REF`) across `t_grid`.
    pub fn band_trace(&self, n: usize, t_grid: &[f64]) -> Result<BlochBand> {
        if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("t grid must be strictly increasing".into()));
        }
        if t_grid.iter().any(|&t| !(t > -PI - 1e-12 && t <= PI + 1e-12)) {
            return Err(Error::InvalidArgument("t grid must lie in (-pi, pi]".into()));
        }
        let count = n + 4;
        let start = self.galerkin_eigenvalues(T_REF, count)[n];
        let free_label = self.free_label(start);

        let split = t_grid.partition_point(|&t| t < T_REF);
        let mut lambdas = vec![Complex64::default(); t_grid.len()];
        let mut forced = vec![false; t_grid.len()];
        let mut tracker = Tracker::new(self, count, T_REF, start);
        for i in split..t_grid.len() {
            lambdas[i] = tracker.advance(t_grid[i])?;
            forced[i] = std::mem::take(&mut tracker.forced);
        }
        let mut tracker = Tracker::new(self, count, T_REF, start);
        for i in (0..split).rev() {
            lambdas[i] = tracker.advance(t_grid[i])?;
            forced[i] = std::mem::take(&mut tracker.forced);
        }

        let mut residuals = Vec::with_capacity(t_grid.len());
        let mut collision_flags = Vec::with_capacity(t_grid.len());
        for (i, &t) in t_grid.iter().enumerate() {
            let (mut lambda, mut residual) = self.polish(t, lambdas[i])?;
            let oracle = self.galerkin_eigenvalues(t, count);
            let within = |lambda: Complex64, tol: f64| oracle.iter().filter(|z| (**z - lambda).norm() <= tol).count();
            if within(lambda, self.merge_tolerance(lambda)) > 1 {
                if let Some(better) = self.refine_multiple(t, lambda)? {
                    (lambda, residual) = better;
                }
            }
            lambdas[i] = lambda;
            residuals.push(residual);
            collision_flags.push(within(lambda, self.collision_tolerance(lambda)) > 1 || forced[i]);
        }
        Ok(BlochBand {
            band_index: n,
            free_label,
            t_grid: t_grid.to_vec(),
            lambdas,
            residuals,
            collision_flags,
        })
    }

    /// Bands `0..count`, traced in parallel.
    pub fn bands(&self, count: usize, t_grid: &[f64]) -> Result<Vec<BlochBand>> {
        (0..count).into_par_iter().map(|n| self.band_trace(n, t_grid)).collect()
    }

    fn free_label(&self, lambda: Complex64) -> i64 {
        let z = self.q.to_internal(lambda);
        let k_max = self.truncation_for(0) as i64 + 2;
        (-k_max..=k_max)
            .min_by(|&a, &b| {
                let wa = 2.0 * PI * a as f64 + T_REF;
                let wb = 2.0 * PI * b as f64 + T_REF;
                (z - wa * wa).norm().total_cmp(&(z - wb * wb).norm())
            })
            .unwrap_or(0)
    }
}

/// Nearest-neighbour continuation with linear prediction and step halving.
struct Tracker<'a> {
    op: &'a HillOperator,
    count: usize,
    t: f64,
    lambda: Complex64,
    slope: Option<Complex64>,
    /// Set when a step was only accepted at the finest resolution.
    forced: bool,
}

impl<'a> Tracker<'a> {
    fn new(op: &'a HillOperator, count: usize, t: f64, lambda: Complex64) -> Self {
        Self {
            op,
            count,
            t,
            lambda,
            slope: None,
            forced: false,
        }
    }

    /// Adaptive stepping towards `target`: halve on rejection, double on success.
    fn advance(&mut self, target: f64) -> Result<Complex64> {
        let (t_lo, t_hi) = (self.t.min(target), self.t.max(target));
        let h_min = (target - self.t).abs() / f64::from(1u32 << self.op.config.max_halvings.min(30));
        let mut h = target - self.t;
        while self.t != target {
            let remaining = target - self.t;
            if h.abs() >= remaining.abs() * (1.0 - 1e-12) {
                h = remaining;
            }
            let next = if h == remaining { target } else { self.t + h };
            let last_chance = h.abs() <= h_min * (1.0 + 1e-9);
            match self.try_step(next, last_chance) {
                Some(lambda) => {
                    self.slope = Some((lambda - self.lambda) / (next - self.t));
                    self.t = next;
                    self.lambda = lambda;
                    h *= 2.0;
                }
                None if !last_chance => h *= 0.5,
                None => return Err(Error::ContinuationFailure { t_lo, t_hi }),
            }
        }
        Ok(self.lambda)
    }

    fn try_step(&mut self, t: f64, last_chance: bool) -> Option<Complex64> {
        let dt = t - self.t;
        let predicted = self.lambda + self.slope.unwrap_or_default() * dt;
        let cands = self.op.galerkin_eigenvalues(t, self.count);
        let mut by_dist: Vec<(f64, Complex64)> = cands
            .iter()
            .take(self.count + 2)
            .map(|&z| ((z - predicted).norm(), z))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (d1, c1) = by_dist[0];
        let (d2, c2) = by_dist.get(1).copied().unwrap_or((f64::INFINITY, c1));
        let scale = 1.0 + self.lambda.norm();
        // Near a branch point λ(t) behaves like √(t − t₀); the last attempt allows that.
        let reach = if last_chance { dt.abs().sqrt() } else { dt.abs() };
        let jump_ok = (c1 - self.lambda).norm() <= self.op.config.jump_factor * scale * reach + 1e-9 * scale;
        let colliding = (c1 - c2).norm() <= self.op.collision_tolerance(c1);
        let unambiguous = d2 >= 2.0 * d1 || colliding;
        let accept = jump_ok && (unambiguous || last_chance && d2 > d1);
        if accept && last_chance {
            self.forced = true;
        }
        accept.then_some(c1)
    }
}

/// `F(λ)` on the default grid.
pub fn discriminant(q: &PeriodicPotential, lambda: Complex64) -> Result<Complex64> {
    HillOperator::with_defaults(q)?.discriminant(lambda)
}

pub fn p_function(q: &PeriodicPotential, lambda: Complex64, branch: Branch) -> Result<Complex64> {
    HillOperator::with_defaults(q)?.p_function(lambda, branch)
}

pub fn bloch_eigenvalues(q: &PeriodicPotential, t: f64, count: usize) -> Result<Vec<Complex64>> {
    HillOperator::with_defaults(q)?.bloch_eigenvalues(t, count)
}

pub fn band_trace(q: &PeriodicPotential, n: usize, t_grid: &[f64]) -> Result<BlochBand> {
    HillOperator::with_defaults(q)?.band_trace(n, t_grid)
}
