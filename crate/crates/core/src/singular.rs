//! Spectral singularities, ESS classification, critical optical couplings and the
//! Mathieu spectrality predicate.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::norming_constant;
use crate::hill::{BlochBand, HillConfig, HillOperator};
use crate::potential::PeriodicPotential;

/// `|α|` below which a local minimum counts as a spectral singularity.
pub const SINGULARITY_THRESHOLD: f64 = 1e-4;
/// Flagged band collisions with `|α|` below this are cut out of the infinity probe.
pub const SINGULAR_COLLISION_ALPHA: f64 = 0.5;
/// Slack around the non-integrability threshold `γ = 1`.
pub const FIT_SLACK: f64 = 0.1;

/// A zero of `α_n(t)` located on band `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSingularity {
    pub n: usize,
    pub t: f64,
    pub lambda: Complex64,
    pub abs_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EssVerdict {
    Ess,
    IntegrableSingularity,
    Regular,
    Inconclusive,
}

/// Log–log least-squares fit `|α| ≈ c s^γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub gamma: f64,
    pub log_c: f64,
    /// RMS deviation of `ln |α|` from the fitted line.
    pub residual: f64,
    pub window: (f64, f64),
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssRecord {
    pub t0: f64,
    pub lambda: Complex64,
    /// Positions of the coalescing eigenvalues in the magnitude order at `t0`.
    pub member_set: Vec<usize>,
    pub exponent: f64,
    pub member_exponents: Vec<f64>,
    pub verdict: EssVerdict,
    pub fit_diagnostics: ExponentFit,
}

impl EssRecord {
    pub fn group(&self) -> CollisionGroup {
        CollisionGroup {
            t0: self.t0,
            lambda: self.lambda,
            members: self.member_set.clone(),
        }
    }
}

/// An eigenvalue of multiplicity above one at `t0`, i.e. a group `𝕊(Λ_j(t0))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionGroup {
    pub t0: f64,
    pub lambda: Complex64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Bounded,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinityProbe {
    pub k_s: Vec<usize>,
    /// Total length of each `I_s`.
    pub measure: Vec<f64>,
    pub integrals: Vec<f64>,
    pub trend: Trend,
    pub growth_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionKind {
    /// The pair gap² changes sign: real pair turns into a complex-conjugate pair.
    Crossing,
    /// The gap² touches zero without changing sign.
    Touching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub v: f64,
    pub t0: f64,
    /// Position of the lower member in the real-part order of the eigenvalues at `t0`.
    pub pair: usize,
    pub lambda: Complex64,
    pub kind: CollisionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    pub interval: (f64, f64),
    /// Quasimomenta to scan: 0 for periodic and π for antiperiodic pairs.
    pub channels: Vec<f64>,
    /// Number of neighbouring pairs examined per channel, from the lowest upwards.
    pub pairs: usize,
    /// Restrict to one pair position.
    pub pair_hint: Option<usize>,
    pub scan_points: usize,
    pub tolerance: f64,
    /// Relative size of `gap²` treated as numerical noise.
    pub noise_floor: f64,
    pub hill: HillConfig,
}

impl Default for CriticalSearch {
    fn default() -> Self {
        Self {
            interval: (0.3, 1.0),
            channels: vec![0.0, PI],
            pairs: 4,
            pair_hint: None,
            scan_points: 48,
            tolerance: 1e-9,
            noise_floor: 1e-10,
            hill: HillConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spectrality {
    AsymptoticallySpectralCandidate,
    NotAsymptoticallySpectral,
    NotSpectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RationalCertificate {
    /// `α = m/q` with `m` odd: `qα` is an odd integer, so the gap infimum is zero.
    OddNumerator,
    /// `α = m/q` with `m` even: `|qα − (2p−1)| ≥ 1/q` for all naturals.
    EvenNumerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralityVerdict {
    pub a: Complex64,
    pub b: Complex64,
    pub alpha_arg: f64,
    pub modulus_equal: bool,
    /// `min |qα − (2p−1)|` over `1 ≤ q, p ≤ n_search`: the distance of `qα` to the odd integers.
    pub odd_gap_infimum: f64,
    pub n_search: u64,
    pub exact_alpha: Option<(i64, u64)>,
    pub rational_certificate: Option<RationalCertificate>,
    /// False when the supplied rational disagrees with `arg(ab)/π`.
    pub exact_alpha_consistent: bool,
    pub verdict: Spectrality,
}

/// `|α_n|` along band `n` at an arbitrary `t`, seeding Newton from the sampled band.
fn alpha_on_band(op: &HillOperator, band: &BlochBand, t: f64) -> Result<(Complex64, f64)> {
    let i = band.t_grid.partition_point(|&s| s < t).min(band.len() - 1);
    let seed = if i == 0 {
        band.lambdas[0]
    } else {
        let (t0, t1) = (band.t_grid[i - 1], band.t_grid[i]);
        let w = (t - t0) / (t1 - t0);
        band.lambdas[i - 1] * (1.0 - w) + band.lambdas[i] * w
    };
    let (lambda, _) = op.polish(t, seed)?;
    Ok((lambda, norming_constant(op, t, lambda)?.norm()))
}

/// Local minima of `|α_n(t)|` below `SINGULARITY_THRESHOLD`, refined by golden section.
pub fn find_spectral_singularities(
    op: &HillOperator,
    n_max: usize,
    t_grid: &[f64],
) -> Result<Vec<SpectralSingularity>> {
    if op.potential().is_self_adjoint() {
        return Ok(Vec::new());
    }
    let bands = op.bands(n_max, t_grid)?;
    let per_band: Vec<Vec<SpectralSingularity>> = bands
        .par_iter()
        .map(|band| singularities_on_band(op, band))
        .collect::<Result<_>>()?;
    Ok(per_band.into_iter().flatten().collect())
}

fn singularities_on_band(op: &HillOperator, band: &BlochBand) -> Result<Vec<SpectralSingularity>> {
    let m = band.len();
    let alphas: Vec<f64> = band
        .t_grid
        .iter()
        .zip(&band.lambdas)
        .map(|(&t, &l)| norming_constant(op, t, l).map(|a| a.norm()))
        .collect::<Result<_>>()?;
    let mut found = Vec::new();
    for i in 0..m {
        let left = if i > 0 { alphas[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < m { alphas[i + 1] } else { f64::INFINITY };
        if !(alphas[i] <= left && alphas[i] <= right) {
            continue;
        }
        let lo = band.t_grid[i.saturating_sub(1)];
        let hi = band.t_grid[(i + 1).min(m - 1)];
        let (t, value) = golden_min(
            |t| alpha_on_band(op, band, t).map(|r| r.1).unwrap_or(f64::INFINITY),
            lo,
            hi,
            1e-8,
        );
        let (t, value) = if value <= alphas[i] {
            (t, value)
        } else {
            (band.t_grid[i], alphas[i])
        };
        if value < SINGULARITY_THRESHOLD {
            let (lambda, _) = alpha_on_band(op, band, t)?;
            found.push(SpectralSingularity {
                n: band.band_index,
                t,
                lambda,
                abs_alpha: value,
            });
        }
    }
    Ok(found)
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Fit `|α| ≈ c s^γ` to `(s, |α|)` samples by least squares in log–log coordinates.
pub fn fit_exponent(samples: &[(f64, f64)]) -> ExponentFit {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(s, a)| *s > 0.0 && *a > 0.0)
        .map(|&(s, a)| (s.ln(), a.ln()))
        .collect();
    let n = pts.len() as f64;
    let window = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(s, _)| (lo.min(s), hi.max(s)));
    if pts.len() < 2 {
        return ExponentFit {
            gamma: f64::NAN,
            log_c: f64::NAN,
            residual: f64::INFINITY,
            window,
            samples: samples.to_vec(),
        };
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let gamma = sxy / sxx;
    let log_c = my - gamma * mx;
    let residual = (pts.iter().map(|p| (p.1 - log_c - gamma * p.0).powi(2)).sum::<f64>() / n).sqrt();
    ExponentFit {
        gamma,
        log_c,
        residual,
        window,
        samples: samples.to_vec(),
    }
}

/// Eigenvalues at `t0` grouped by the collision tolerance; groups of size ≥ 2 only.
pub fn collision_groups(op: &HillOperator, t0: f64, count: usize) -> Result<Vec<CollisionGroup>> {
    let eig = op.bloch_eigenvalues(t0, count)?;
    let mut groups: Vec<CollisionGroup> = Vec::new();
    for (i, &l) in eig.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| (g.lambda - l).norm() <= op.collision_tolerance(l))
        {
            Some(g) => g.members.push(i),
            None => groups.push(CollisionGroup {
                t0,
                lambda: l,
                members: vec![i],
            }),
        }
    }
    groups.retain(|g| g.members.len() > 1);
    Ok(groups)
}

/// Merge singularities found on different bands at the same `(t, λ)` into groups.
pub fn groups_from_singularities(found: &[SpectralSingularity], op: &HillOperator) -> Vec<CollisionGroup> {
    let mut groups: Vec<CollisionGroup> = Vec::new();
    for s in found {
        let near = |g: &CollisionGroup| {
            (g.t0 - s.t).abs() < 1e-4 && (g.lambda - s.lambda).norm() <= op.collision_tolerance(s.lambda)
        };
        match groups.iter_mut().find(|g| near(g)) {
            Some(g) => g.members.push(s.n),
            None => groups.push(CollisionGroup {
                t0: s.t,
                lambda: s.lambda,
                members: vec![s.n],
            }),
        }
    }
    groups
}

/// The `k` Bloch eigenvalues at `t` closest to `center`, sorted by real then imaginary part.
pub fn local_eigenvalues(op: &HillOperator, t: f64, center: Complex64, k: usize) -> Result<Vec<Complex64>> {
    let mut cands = op.galerkin_eigenvalues(t, k + 8);
    cands.sort_by(|a, b| (a - center).norm().total_cmp(&(b - center).norm()));
    cands
        .into_iter()
        .take(k)
        .map(|seed| op.polish(t, seed).map(|r| r.0))
        .collect::<Result<Vec<_>>>()
        .map(|mut v| {
            v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            v
        })
}

/// Classification window for `classify_ess`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            lo: 1e-5,
            hi: 1e-2,
            points: 13,
        }
    }
}

impl FitWindow {
    pub fn offsets(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..self.points)
            .map(|i| (a + (b - a) * i as f64 / (self.points - 1).max(1) as f64).exp())
            .collect()
    }
}

/// Fit the local order of `|α_n(t)|` at `t0` for the members of `group`.
pub fn classify_ess(op: &HillOperator, group: &CollisionGroup, window: FitWindow) -> Result<EssRecord> {
    let k = group.members.len().max(1);
    let offsets = window.offsets();
    // Samples on the side t0 + s, staying inside (−π, π] for t0 = π.
    let side = if group.t0 > 0.0 { -1.0 } else { 1.0 };
    let per_offset: Vec<Vec<f64>> = offsets
        .par_iter()
        .map(|&s| {
            let t = group.t0 + side * s;
            let mut alphas = local_eigenvalues(op, t, group.lambda, k)?
                .into_iter()
                .map(|l| norming_constant(op, t, l).map(|a| a.norm()))
                .collect::<Result<Vec<f64>>>()?;
            alphas.sort_by(f64::total_cmp);
            Ok(alphas)
        })
        .collect::<Result<_>>()?;
    let mut member_exponents = Vec::with_capacity(k);
    let mut all = Vec::new();
    for m in 0..k {
        let samples: Vec<(f64, f64)> = offsets.iter().zip(&per_offset).map(|(&s, a)| (s, a[m])).collect();
        member_exponents.push(fit_exponent(&samples).gamma);
        all.extend(samples);
    }
    let fit = fit_exponent(&all);
    let min_alpha = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let verdict = if min_alpha > 0.1 || fit.gamma.abs() < FIT_SLACK {
        EssVerdict::Regular
    } else if !(fit.residual <= FIT_SLACK) {
        EssVerdict::Inconclusive
    } else if fit.gamma >= 1.0 - FIT_SLACK {
        EssVerdict::Ess
    } else {
        EssVerdict::IntegrableSingularity
    };
    Ok(EssRecord {
        t0: group.t0,
        lambda: group.lambda,
        member_set: group.members.clone(),
        exponent: fit.gamma,
        member_exponents,
        verdict,
        fit_diagnostics: fit,
    })
}

/// Integrals of `1/|α_k|` over the band grid minus `margin`-neighbourhoods of collisions.
pub fn ess_at_infinity_probe(op: &HillOperator, bands: &[usize], t_grid: &[f64], margin: f64) -> Result<InfinityProbe> {
    let rows: Vec<(f64, f64)> = bands
        .par_iter()
        .map(|&k| {
            let band = op.band_trace(k, t_grid)?;
            let alphas = band
                .t_grid
                .iter()
                .zip(&band.lambdas)
                .map(|(&t, &l)| norming_constant(op, t, l).map(|a| a.norm()))
                .collect::<Result<Vec<f64>>>()?;
            // Semisimple collisions (free bands at t = 0, π) keep |α| ≈ 1 and stay in I_s.
            let flagged: Vec<f64> = (0..band.len())
                .filter(|&i| band.collision_flags[i] && alphas[i] < SINGULAR_COLLISION_ALPHA)
                .map(|i| band.t_grid[i])
                .collect();
            Ok(periodic_trapezoid(&band.t_grid, &alphas, &flagged, margin))
        })
        .collect::<Result<_>>()?;
    let integrals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (trend, growth_ratio) = classify_trend(&integrals);
    Ok(InfinityProbe {
        k_s: bands.to_vec(),
        measure: rows.iter().map(|r| r.0).collect(),
        integrals,
        trend,
        growth_ratio,
    })
}

/// Trapezoid integral of `1/α` over a 2π-periodic grid, skipping cells near `excluded`.
/// Returns the measure kept and the integral.
fn periodic_trapezoid(t: &[f64], alpha: &[f64], excluded: &[f64], margin: f64) -> (f64, f64) {
    let dist = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let keep = |s: f64| excluded.iter().all(|&e| dist(s, e) >= margin);
    let n = t.len();
    let (mut measure, mut total) = (0.0, 0.0);
    for i in 0..n {
        let j = (i + 1) % n;
        let width = if j == 0 {
            t[0] + 2.0 * PI - t[n - 1]
        } else {
            t[j] - t[i]
        };
        if keep(t[i]) && keep(t[j]) {
            measure += width;
            total += 0.5 * width * (1.0 / alpha[i] + 1.0 / alpha[j]);
        }
    }
    (measure, total)
}

fn classify_trend(values: &[f64]) -> (Trend, f64) {
    if values.len() < 3 {
        return (Trend::Inconclusive, f64::NAN);
    }
    let last = &values[values.len() - 3..];
    let ratio = last[2] / last[0];
    let monotone = last[0] < last[1] && last[1] < last[2];
    let spread = last.iter().cloned().fold(0.0, f64::max) / last.iter().cloned().fold(f64::INFINITY, f64::min);
    let trend = if monotone && ratio >= 2.0 {
        Trend::Diverging
    } else if spread <= 1.5 {
        Trend::Bounded
    } else {
        Trend::Inconclusive
    };
    (trend, ratio)
}

/// Eigenvalues at `t0` in real-part order (ties broken by imaginary part).
fn sorted_by_real(mut v: Vec<Complex64>) -> Vec<Complex64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

/// `(λ_i − λ_{i+1})²` for the real-part neighbours at position `pair`, or `None` when it
/// is not real (a real eigenvalue next to a member of a complex pair). Positive for two
/// real eigenvalues, negative for a complex-conjugate pair; smooth through a collision.
fn pair_gap2(search: &CriticalSearch, v: f64, t0: f64, pair: usize) -> Result<Option<(f64, Complex64)>> {
    let op = HillOperator::new(&PeriodicPotential::optical(v)?, search.hill.clone())?;
    let eig = sorted_by_real(op.galerkin_eigenvalues(t0, 2 * search.pairs + 4));
    let (a, b) = (eig[pair], eig[pair + 1]);
    let g = (a - b) * (a - b);
    let scale = (1.0 + a.norm()).powi(2);
    Ok((g.im.abs() <= 1e-6 * g.norm() + search.noise_floor * scale).then_some((g.re, 0.5 * (a + b))))
}

/// Couplings `V` at which two eigenvalues of `optical(V)` coalesce at the scanned
/// quasimomenta, from sign changes (crossings) and tangential zeros (touchings) of the
/// pair discriminant `gap²(V)`. Each hit is checked against the shooting discriminant.
pub fn critical_v(search: &CriticalSearch) -> Result<Vec<CriticalValue>> {
    let (a, b) = search.interval;
    if !(a >= 0.0 && b > a) {
        return Err(Error::InvalidArgument(format!("bad search interval ({a}, {b})")));
    }
    let n = search.scan_points.max(3);
    let vs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let pairs: Vec<usize> = match search.pair_hint {
        Some(p) => vec![p],
        None => (0..search.pairs).collect(),
    };
    let gap = |v: f64, t0: f64, pair: usize| pair_gap2(search, v, t0, pair).ok().flatten();
    let mut out = Vec::new();
    for &t0 in &search.channels {
        for &pair in &pairs {
            let g: Vec<Option<(f64, Complex64)>> = vs.par_iter().map(|&v| gap(v, t0, pair)).collect();
            let floor = |z: Complex64| search.noise_floor * (1.0 + z.norm()).powi(2);
            for i in 0..n {
                let (Some((g0, z0)), Some((g1, _))) = (g[i], g[i + 1]) else {
                    continue;
                };
                if g0.abs() > floor(z0) && g1.abs() > floor(z0) && g0.signum() != g1.signum() {
                    let f = |v: f64| gap(v, t0, pair).map(|r| r.0).unwrap_or(f64::NAN);
                    let v = bisect(f, vs[i], vs[i + 1], g0, search.tolerance);
                    if let Some(hit) = confirm(search, v, t0, pair, CollisionKind::Crossing)? {
                        out.push(hit);
                    }
                }
            }
            for i in 1..n {
                let (Some((gl, z)), Some((gm, _)), Some((gr, _))) = (g[i - 1], g[i], g[i + 1]) else {
                    continue;
                };
                let resolved = gl.abs().min(gr.abs()) > 100.0 * floor(z);
                if resolved && gl.signum() == gr.signum() && gm.abs() < gl.abs() && gm.abs() < gr.abs() {
                    let f = |v: f64| gap(v, t0, pair).map(|r| r.0.abs()).unwrap_or(f64::INFINITY);
                    let (v, gmin) = golden_min(f, vs[i - 1], vs[i + 1], search.tolerance);
                    if gmin < floor(z) {
                        if let Some(hit) = confirm(search, v, t0, pair, CollisionKind::Touching)? {
                            out.push(hit);
                        }
                    }
                }
            }
        }
    }
    out.sort_by(|x, y| x.v.total_cmp(&y.v));
    Ok(out)
}

/// Keep a detection only if the pair midpoint solves `F(λ) = 2cos t0` by shooting.
fn confirm(
    search: &CriticalSearch,
    v: f64,
    t0: f64,
    pair: usize,
    kind: CollisionKind,
) -> Result<Option<CriticalValue>> {
    let Some((_, lambda)) = pair_gap2(search, v, t0, pair)? else {
        return Ok(None);
    };
    let op = HillOperator::new(&PeriodicPotential::optical(v)?, search.hill.clone())?;
    let residual = (op.discriminant(lambda)? - 2.0 * t0.cos()).norm();
    Ok((residual < 1e-6).then_some(CriticalValue {
        v,
        t0,
        pair,
        lambda,
        kind,
    }))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, f_lo: f64, tol: f64) -> f64 {
    let mut s_lo = f_lo.signum();
    if f_lo == 0.0 {
        return lo;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == s_lo {
            lo = mid;
            s_lo = fm.signum();
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Distinct critical couplings in `interval`. Detections within `1e-3` of each other
/// are one coupling; the value from the lowest pair (the best resolved) is kept.
pub fn critical_values(interval: (f64, f64)) -> Result<Vec<f64>> {
    Ok(distinct_couplings(critical_v(&CriticalSearch {
        interval,
        ..Default::default()
    })?))
}

/// Clusters detections in increasing `v` order, as in [`critical_values`].
pub fn distinct_couplings(found: Vec<CriticalValue>) -> Vec<f64> {
    let mut clusters: Vec<Vec<CriticalValue>> = Vec::new();
    for c in found {
        match clusters.last_mut() {
            Some(cl) if c.v - cl[cl.len() - 1].v <= 1e-3 => cl.push(c),
            _ => clusters.push(vec![c]),
        }
    }
    clusters
        .into_iter()
        .filter_map(|cl| {
            cl.into_iter()
                .min_by_key(|c| (c.pair, c.kind == CollisionKind::Touching))
                .map(|c| c.v)
        })
        .collect()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Spectrality of the Mathieu operator `H(a, b)` from the modulus rule and the distance of
/// `qα` to the odd integers. A positive bounded infimum is evidence, not proof.
pub fn mathieu_spectrality(
    a: Complex64,
    b: Complex64,
    exact_alpha: Option<(i64, u64)>,
    n_search: u64,
) -> Result<SpectralityVerdict> {
    if n_search == 0 {
        return Err(Error::InvalidArgument("n_search must be at least 1".into()));
    }
    if let Some((_, 0)) = exact_alpha {
        return Err(Error::InvalidArgument("zero denominator".into()));
    }
    let alpha_arg = (a * b).arg() / PI;
    let scale = a.norm().max(b.norm()).max(1.0);
    let modulus_equal = (a.norm() - b.norm()).abs() <= 1e-12 * scale;
    let mut infimum = f64::INFINITY;
    for q in 1..=n_search {
        // The nearest odd number to qα is the only candidate worth checking.
        let x = q as f64 * alpha_arg;
        let p = (((x + 1.0) / 2.0).round()).clamp(1.0, n_search as f64);
        infimum = infimum.min((x - (2.0 * p - 1.0)).abs());
    }
    let reduced = exact_alpha.map(|(m, q)| {
        let g = gcd(m.unsigned_abs(), q).max(1);
        (m / g as i64, q / g)
    });
    let rational_certificate = reduced.map(|(m, _)| {
        if m % 2 != 0 {
            RationalCertificate::OddNumerator
        } else {
            RationalCertificate::EvenNumerator
        }
    });
    let exact_alpha_consistent = reduced.is_none_or(|(m, q)| {
        let r = m as f64 / q as f64;
        let d = (r - alpha_arg).rem_euclid(2.0);
        d.min(2.0 - d) < 1e-9
    });
    let verdict = if !modulus_equal {
        Spectrality::NotSpectral
    } else {
        match rational_certificate {
            Some(RationalCertificate::OddNumerator) => Spectrality::NotAsymptoticallySpectral,
            Some(RationalCertificate::EvenNumerator) => Spectrality::AsymptoticallySpectralCandidate,
            None if infimum < 1e-12 => Spectrality::NotAsymptoticallySpectral,
            None => Spectrality::AsymptoticallySpectralCandidate,
        }
    };
    Ok(SpectralityVerdict {
        a,
        b,
        alpha_arg,
        modulus_equal,
        odd_gap_infimum: infimum,
        n_search,
        exact_alpha,
        rational_certificate,
        exact_alpha_consistent,
        verdict,
    })
}

/// CSV with columns `n, t, re_lambda, im_lambda, abs_alpha`.
pub fn write_singularities_csv<W: Write>(rows: &[SpectralSingularity], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "t", "re_lambda", "im_lambda", "abs_alpha"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.t.to_string(),
            r.lambda.re.to_string(),
            r.lambda.im.to_string(),
            r.abs_alpha.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `t0, re_lambda, im_lambda, members, exponent, fit_residual, verdict`.
pub fn write_ess_csv<W: Write>(rows: &[EssRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t0",
        "re_lambda",
        "im_lambda",
        "members",
        "exponent",
        "fit_residual",
        "verdict",
    ])?;
    for r in rows {
        let members: Vec<String> = r.member_set.iter().map(|m| m.to_string()).collect();
        let verdict = serde_json::to_value(r.verdict)?;
        w.write_record([
            r.t0.to_string(),
            r.lambda.re.to_string(),
            r.lambda.im.to_string(),
            members.join(" "),
            r.exponent.to_string(),
            r.fit_diagnostics.residual.to_string(),
            verdict.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `v, t0, pair, re_lambda, im_lambda, kind`.
pub fn write_critical_csv<W: Write>(rows: &[CriticalValue], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "t0", "pair", "re_lambda", "im_lambda", "kind"])?;
    for r in rows {
        let kind = serde_json::to_value(r.kind)?;
        w.write_record([
            r.v.to_string(),
            r.t0.to_string(),
            r.pair.to_string(),
            r.lambda.re.to_string(),
            r.lambda.im.to_string(),
            kind.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_fit_recovers_powers() {
        for gamma in [0.5, 1.0, 1.5] {
            let samples: Vec<(f64, f64)> = FitWindow::default()
                .offsets()
                .into_iter()
                .map(|t| (t, t.powf(gamma) * (1.0 + 0.1 * t)))
                .collect();
            let fit = fit_exponent(&samples);
            assert!((fit.gamma - gamma).abs() < 0.05, "{gamma}: {}", fit.gamma);
            assert!(fit.residual < 1e-3);
        }
    }

    #[test]
    fn golden_section_finds_minimum() {
        let (x, fx) = golden_min(|x| (x - 0.3).abs(), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9 && fx < 1e-9);
    }

    #[test]
    fn spectrality_rules() {
        let one = Complex64::new(1.0, 0.0);
        let v = mathieu_spectrality(one, one, None, 50).unwrap();
        assert_eq!(v.verdict, Spectrality::AsymptoticallySpectralCandidate);
        assert!((v.odd_gap_infimum - 1.0).abs() < 1e-15);
        let v = mathieu_spectrality(one, Complex64::new(2.0, 0.0), None, 50).unwrap();
        assert_eq!(v.verdict, Spectrality::NotSpectral);
        let b = Complex64::from_polar(1.0, PI / 3.0);
        let v = mathieu_spectrality(one, b, Some((1, 3)), 50).unwrap();
        assert_eq!(v.verdict, Spectrality::NotAsymptoticallySpectral);
        assert_eq!(v.rational_certificate, Some(RationalCertificate::OddNumerator));
        assert!(v.exact_alpha_consistent);
        assert!(v.odd_gap_infimum < 1e-12);
        let b = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
        let v = mathieu_spectrality(one, b, Some((2, 3)), 50).unwrap();
        assert_eq!(v.verdict, Spectrality::AsymptoticallySpectralCandidate);
        assert!(v.odd_gap_infimum >= 1.0 / 3.0 - 1e-12);
    }

    #[test]
    fn trend_rules() {
        assert_eq!(classify_trend(&[1.0, 1.1, 1.05]).0, Trend::Bounded);
        assert_eq!(classify_trend(&[1.0, 2.0, 4.0]).0, Trend::Diverging);
        assert_eq!(classify_trend(&[1.0]).0, Trend::Inconclusive);
    }

    #[test]
    fn trapezoid_wraps_around() {
        let t: Vec<f64> = (1..=8).map(|j| -PI + 2.0 * PI * j as f64 / 8.0).collect();
        let ones = vec![1.0; 8];
        let (m, total) = periodic_trapezoid(&t, &ones, &[], 0.1);
        assert!((m - 2.0 * PI).abs() < 1e-12 && (total - 2.0 * PI).abs() < 1e-12);
        let (m, _) = periodic_trapezoid(&t, &ones, &[0.0], 0.1);
        assert!((m - 2.0 * PI * 6.0 / 8.0).abs() < 1e-12);
    }
}
