//! Gelfand transform, coefficient functionals `a_n(t)` and reconstruction of a test
//! function from spectral data, either in the quasimomentum `t` or along the spectrum.
//!
//! Everything runs in the rescaled variable `ξ = x / period`, where Bloch functions are
//! sampled on `j / N`. A test function is held through its translates
//! `f(period·(ξ + k))`, `|k| ≤ K`, so the Gelfand sum is exact for compact support.
//! Reconstructions are evaluated on lattice points `ξ = m + j/N` and extended across
//! periods with the quasi-periodicity of the Bloch functions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{eigen_triple, EigenTriple};
use crate::hill::{Branch, HillOperator};
use crate::potential::{parse_complex, split_call};
use crate::quad::{self, Panel};
use crate::singular::{
    classify_ess, collision_groups, local_eigenvalues, CollisionGroup, EssRecord, EssVerdict, FitWindow,
};

pub const SCHEMA_VERSION: u32 = 1;
/// Half-width of the excluded quasimomentum windows around 0 and π.
pub const DEFAULT_H: f64 = 0.02;
pub const DEFAULT_N_MAX: usize = 16;
pub const CAUCHY_TOLERANCE: f64 = 1e-3;
/// Largest relative mismatch accepted when fixing the branch of `p(λ)`.
pub const BRANCH_TOLERANCE: f64 = 1e-2;
/// Gaussians are treated as zero beyond this many widths from the centre.
pub const GAUSSIAN_CUTOFF: f64 = 12.0;

/// Upper bound for `h`, reading the admissible range as `(0, 1/(15π))`.
pub fn h_max() -> f64 {
    1.0 / (15.0 * PI)
}

/// A compactly supported input function in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    /// `exp(−(x − center)² / (2 width²))`, cut off at `GAUSSIAN_CUTOFF` widths.
    Gaussian {
        center: f64,
        width: f64,
    },
    /// Indicator of `[a, b)`.
    Indicator {
        a: f64,
        b: f64,
    },
    /// Samples on a uniform grid over `[lo, hi]`, linearly interpolated, zero outside.
    Sampled {
        lo: f64,
        hi: f64,
        values: Vec<Complex64>,
    },
    Combination {
        terms: Vec<(Complex64, TestFunction)>,
    },
}

impl TestFunction {
    pub fn gaussian(center: f64, width: f64) -> Result<Self> {
        let f = Self::Gaussian { center, width };
        f.validate()?;
        Ok(f)
    }

    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        let f = Self::Indicator { a, b };
        f.validate()?;
        Ok(f)
    }

    pub fn sampled(lo: f64, hi: f64, values: Vec<Complex64>) -> Result<Self> {
        let f = Self::Sampled { lo, hi, values };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Self::Gaussian { center, width } => {
                if !center.is_finite() || !(width.is_finite() && *width > 0.0) {
                    return bad(format!(
                        "gaussian needs a finite centre and positive width, got ({center}, {width})"
                    ));
                }
            }
            Self::Indicator { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return bad(format!("indicator needs finite a < b, got ({a}, {b})"));
                }
            }
            Self::Sampled { lo, hi, values } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) || values.len() < 2 {
                    return bad("sampled function needs lo < hi and at least two values".into());
                }
                if values.iter().any(|z| !z.is_finite()) {
                    return bad("sampled function has non-finite values".into());
                }
            }
            Self::Combination { terms } => {
                if terms.is_empty() {
                    return bad("empty combination".into());
                }
                for (c, f) in terms {
                    if !c.is_finite() {
                        return bad("non-finite combination weight".into());
                    }
                    f.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Closed interval outside which the function vanishes.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Gaussian { center, width } => (center - GAUSSIAN_CUTOFF * width, center + GAUSSIAN_CUTOFF * width),
            Self::Indicator { a, b } => (*a, *b),
            Self::Sampled { lo, hi, .. } => (*lo, *hi),
            Self::Combination { terms } => terms
                .iter()
                .map(|(_, f)| f.support())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                    (lo.min(a), hi.max(b))
                }),
        }
    }

    pub fn evaluate(&self, x: f64) -> Complex64 {
        match self {
            Self::Gaussian { center, width } => {
                let u = (x - center) / width;
                if u.abs() > GAUSSIAN_CUTOFF {
                    Complex64::default()
                } else {
                    Complex64::from((-0.5 * u * u).exp())
                }
            }
            Self::Indicator { a, b } => Complex64::from(if *a <= x && x < *b { 1.0 } else { 0.0 }),
            Self::Sampled { lo, hi, values } => {
                if x < *lo || x > *hi {
                    return Complex64::default();
                }
                let pos = (x - lo) / (hi - lo) * (values.len() - 1) as f64;
                let i = (pos.floor() as usize).min(values.len() - 2);
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
            Self::Combination { terms } => terms.iter().map(|(c, f)| c * f.evaluate(x)).sum(),
        }
    }

    /// Parses `gaussian(center, width)`, `indicator(a, b)` or a JSON object.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.starts_with('{') {
            let f: Self = serde_json::from_str(spec)?;
            f.validate()?;
            return Ok(f);
        }
        let (name, args) = split_call(spec)?;
        let nums = args
            .iter()
            .map(|a| {
                let z = parse_complex(a)?;
                if z.im != 0.0 {
                    return Err(Error::Parse(format!("expected a real argument, got `{a}`")));
                }
                Ok(z.re)
            })
            .collect::<Result<Vec<f64>>>()?;
        match (name.to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("gaussian", [c, w]) => Self::gaussian(*c, *w),
            ("indicator", [a, b]) => Self::indicator(*a, *b),
            _ => Err(Error::Parse(format!("unknown test function `{spec}`"))),
        }
    }
}

/// Smallest `K` with the support of `f` inside `period · [−K, K + 1]`.
pub fn translation_truncation(f: &TestFunction, period: f64) -> usize {
    let (lo, hi) = f.support();
    let slack = 1e-12;
    let below = (-lo / period - slack).ceil().max(0.0);
    let above = (hi / period - 1.0 - slack).ceil().max(0.0);
    below.max(above) as usize
}

/// Samples of the translates `f(period·(ξ + k))`, `ξ = j/N`, `j = 0..=N`, `|k| ≤ K`.
#[derive(Debug, Clone)]
pub struct TranslateTable {
    period: f64,
    grid: usize,
    k: usize,
    rows: Vec<Vec<Complex64>>,
}

impl TranslateTable {
    pub fn new(f: &TestFunction, period: f64, k: usize, grid: usize) -> Result<Self> {
        f.validate()?;
        if !(period.is_finite() && period > 0.0) || grid < 2 {
            return Err(Error::InvalidArgument(format!("bad period {period} or grid {grid}")));
        }
        let (lo, hi) = f.support();
        let slack = 1e-12 * period;
        if lo < -(k as f64) * period - slack || hi > (k as f64 + 1.0) * period + slack {
            return Err(Error::SupportOverflow { lo, hi, k });
        }
        let kk = k as i64;
        let rows = (-kk..=kk)
            .map(|shift| {
                (0..=grid)
                    .map(|j| f.evaluate(period * (shift as f64 + j as f64 / grid as f64)))
                    .collect()
            })
            .collect();
        Ok(Self { period, grid, k, rows })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `f_t(ξ) = Σ_k f(ξ + k) e^{−ikt}` on `j/N`, `j = 0..=N`.
    pub fn f_t(&self, t: f64) -> Vec<Complex64> {
        let kk = self.k as i64;
        let mut out = vec![Complex64::default(); self.grid + 1];
        for (row, shift) in self.rows.iter().zip(-kk..=kk) {
            let phase = Complex64::cis(-(shift as f64) * t);
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * phase;
            }
        }
        // The endpoint follows from quasi-periodicity even when K does not reach it.
        out[self.grid] = Complex64::cis(t) * out[0];
        out
    }

    /// `f` at `ξ = m + j/N`, zero outside the table.
    pub fn value(&self, m: i64, j: usize) -> Complex64 {
        let i = m + self.k as i64;
        if i < 0 || i as usize >= self.rows.len() {
            return Complex64::default();
        }
        self.rows[i as usize][j]
    }

    /// `∫ |f(ξ)|² dξ` by the composite trapezoid rule.
    pub fn energy(&self) -> f64 {
        let n = self.grid;
        let total: f64 = self
            .rows
            .iter()
            .map(|r| r[..n].iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        total / n as f64
    }
}

/// One fibre of the Gelfand transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelfandSlice {
    pub t: f64,
    /// Samples on `j/N`, `j = 0..=N`, in the rescaled variable.
    pub f_t: Vec<Complex64>,
    /// Translation truncation `K`.
    pub k: usize,
    /// `a_n(t)` keyed by position in the supplied triple list.
    pub a: BTreeMap<usize, Complex64>,
    /// `‖f_t − Σ a_n Ψ_n‖ / ‖f_t‖` after `coefficients`.
    pub partial_residual: Option<f64>,
}

pub fn gelfand_transform(f: &TestFunction, t: f64, k: usize, period: f64, grid: usize) -> Result<GelfandSlice> {
    let table = TranslateTable::new(f, period, k, grid)?;
    Ok(slice_of(&table, t))
}

fn slice_of(table: &TranslateTable, t: f64) -> GelfandSlice {
    GelfandSlice {
        t,
        f_t: table.f_t(t),
        k: table.k,
        a: BTreeMap::new(),
        partial_residual: None,
    }
}

/// `(1/2π) ∫ f_t dt` on one period by the `points`-node trapezoid rule in `t`.
pub fn gelfand_inverse(table: &TranslateTable, points: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::default(); table.grid];
    for i in 0..points {
        let t = -PI + 2.0 * PI * (i as f64 + 0.5) / points as f64;
        for (a, v) in acc.iter_mut().zip(table.f_t(t)) {
            *a += v / points as f64;
        }
    }
    acc
}

/// `a_n(t) = (f_t, X_{n,t})` for each triple, with the partial-sum residual.
pub fn coefficients(slice: &GelfandSlice, triples: &[EigenTriple]) -> Result<GelfandSlice> {
    let n = slice.f_t.len() - 1;
    let mut out = slice.clone();
    out.a.clear();
    let mut remainder: Vec<Complex64> = slice.f_t[..n].to_vec();
    for (i, tr) in triples.iter().enumerate() {
        if (tr.t - slice.t).abs() > 1e-12 || tr.psi.len() != slice.f_t.len() {
            return Err(Error::InvalidArgument(format!(
                "triple {i} is for t = {} on {} samples, slice is t = {} on {}",
                tr.t,
                tr.psi.len(),
                slice.t,
                slice.f_t.len()
            )));
        }
        let a = tr.coefficient(&slice.f_t);
        for (r, p) in remainder.iter_mut().zip(&tr.psi) {
            *r -= a * p;
        }
        out.a.insert(i, a);
    }
    let scale = quad::norm(&slice.f_t[..n]);
    out.partial_residual = Some(if scale > 0.0 {
        quad::norm(&remainder) / scale
    } else {
        0.0
    });
    Ok(out)
}

/// Lattice `ξ = m + j·stride/N` for `m` in `first_period .. first_period + periods`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct XGrid {
    pub first_period: i64,
    pub periods: usize,
    pub stride: usize,
}

impl XGrid {
    pub fn single(stride: usize) -> Self {
        Self {
            first_period: 0,
            periods: 1,
            stride,
        }
    }

    /// The periods meeting the support of `f`.
    pub fn covering(f: &TestFunction, period: f64, stride: usize) -> Self {
        let (lo, hi) = f.support();
        let first = (lo / period).floor() as i64;
        let last = ((hi / period).ceil() as i64).max(first + 1);
        Self {
            first_period: first,
            periods: (last - first) as usize,
            stride,
        }
    }

    fn lattice(&self, grid: usize) -> Result<Vec<(i64, usize)>> {
        if self.stride == 0 || self.stride > grid || self.periods == 0 {
            return Err(Error::InvalidArgument(format!("bad x-grid {self:?} for N = {grid}")));
        }
        Ok((0..self.periods as i64)
            .flat_map(|m| (0..grid).step_by(self.stride).map(move |j| (self.first_period + m, j)))
            .collect())
    }
}

/// Splitting of `(−π, π]` into `B(h)` and the windows around 0 and π, with the ESS groups
/// that need grouped principal-value integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub h: f64,
    /// Decreasing cut-offs, all below `h`.
    pub delta_seq: Vec<f64>,
    pub groups0: Vec<EssRecord>,
    pub groups_pi: Vec<EssRecord>,
    /// Gauss–Legendre panels on each half of `B(h)`.
    pub bulk_panels: usize,
    pub order: usize,
    pub cauchy_tolerance: f64,
}

impl GroupingPlan {
    pub fn new(h: f64) -> Result<Self> {
        let plan = Self {
            h,
            delta_seq: Self::default_delta_seq(h),
            groups0: Vec::new(),
            groups_pi: Vec::new(),
            bulk_panels: 6,
            order: 10,
            cauchy_tolerance: CAUCHY_TOLERANCE,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `10⁻¹ h, 10⁻² h, …, 10⁻⁵ h`.
    pub fn default_delta_seq(h: f64) -> Vec<f64> {
        (1..=5).map(|e| h * 10f64.powi(-e)).collect()
    }

    pub fn with_delta_seq(mut self, delta_seq: Vec<f64>) -> Result<Self> {
        self.delta_seq = delta_seq;
        self.validate()?;
        Ok(self)
    }

    pub fn with_layout(mut self, bulk_panels: usize, order: usize) -> Result<Self> {
        self.bulk_panels = bulk_panels;
        self.order = order;
        self.validate()?;
        Ok(self)
    }

    /// Files each record under 0 or π. Records at other quasimomenta are rejected.
    pub fn with_groups(mut self, records: Vec<EssRecord>) -> Result<Self> {
        for mut r in records {
            if r.t0.abs() < 1e-9 {
                r.t0 = 0.0;
                self.groups0.push(r);
            } else if (r.t0.abs() - PI).abs() < 1e-9 {
                r.t0 = PI;
                self.groups_pi.push(r);
            } else {
                return Err(Error::InvalidArgument(format!(
                    "ESS group at t0 = {} is not at 0 or π",
                    r.t0
                )));
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Plan whose groups are the collisions at 0 and π among the first `n_max` eigenvalues
    /// that classify as ESS. Self-adjoint potentials have none.
    pub fn detect(op: &HillOperator, n_max: usize, h: f64) -> Result<Self> {
        let plan = Self::new(h)?;
        if op.potential().is_self_adjoint() {
            return Ok(plan);
        }
        let mut records = Vec::new();
        for t0 in [0.0, PI] {
            for g in collision_groups(op, t0, n_max)? {
                let r = classify_ess(op, &g, FitWindow::default())?;
                if r.verdict == EssVerdict::Ess {
                    records.push(r);
                }
            }
        }
        plan.with_groups(records)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.h > 0.0 && self.h < h_max()) {
            return bad(format!("h = {} is outside (0, 1/(15π))", self.h));
        }
        if self.delta_seq.is_empty()
            || self.delta_seq[0] >= self.h
            || self.delta_seq.windows(2).any(|w| !(w[1] < w[0]))
            || self.delta_seq.iter().any(|d| !(*d > 0.0))
        {
            return bad("delta_seq must be positive, decreasing and below h".into());
        }
        if self.bulk_panels == 0 || self.order == 0 || !(self.cauchy_tolerance > 0.0) {
            return bad("panels, order and Cauchy tolerance must be positive".into());
        }
        for groups in [&self.groups0, &self.groups_pi] {
            let mut seen = std::collections::BTreeSet::new();
            for g in groups {
                for m in &g.member_set {
                    if !seen.insert(*m) {
                        return bad(format!("band {m} belongs to two groups"));
                    }
                }
            }
        }
        Ok(())
    }

    /// `B(h) = [−π+h, −h] ∪ [h, π−h]`.
    pub fn b_h(&self) -> [(f64, f64); 2] {
        [(-PI + self.h, -self.h), (self.h, PI - self.h)]
    }

    /// Union of the member sets at 0.
    pub fn s0(&self) -> Vec<usize> {
        union(&self.groups0)
    }

    pub fn s_pi(&self) -> Vec<usize> {
        union(&self.groups_pi)
    }

    pub fn groups(&self) -> impl Iterator<Item = &EssRecord> {
        self.groups0.iter().chain(&self.groups_pi)
    }

    fn window_groups(&self, center: Option<f64>) -> Vec<&EssRecord> {
        match center {
            Some(0.0) => self.groups0.iter().collect(),
            Some(_) => self.groups_pi.iter().collect(),
            None => Vec::new(),
        }
    }
}

fn union(groups: &[EssRecord]) -> Vec<usize> {
    let mut v: Vec<usize> = groups.iter().flat_map(|g| g.member_set.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TDomain,
    LambdaDomain,
}

/// Convergence table of one grouped principal-value integral. Norms are RMS over the x-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvRow {
    pub t0: f64,
    pub lambda: Complex64,
    pub members: Vec<usize>,
    pub deltas: Vec<f64>,
    /// `‖G(δ)‖` of the grouped integral over `h > |t − t0| > δ`.
    pub grouped_norms: Vec<f64>,
    /// `‖G(δ_i) − G(δ_{i−1})‖`; the first entry is the norm of `G(δ_0)`.
    pub differences: Vec<f64>,
    /// Leading cut-offs at which the member eigenvalues are resolved and tabulated.
    pub member_levels: usize,
    /// `‖∫ a_k Ψ_k dt‖` per member (members ordered by real part of `λ`).
    pub member_signed_norms: Vec<Vec<f64>>,
    /// `∫ ‖a_k Ψ_k‖ dt` per member.
    pub member_abs_integrals: Vec<Vec<f64>>,
    pub extrapolated_norm: f64,
    pub converged: bool,
}

/// Result of a grouped principal-value integral (without the `1/2π`).
#[derive(Debug, Clone)]
pub struct PvResult {
    pub row: PvRow,
    /// Richardson limit on the x-grid.
    pub values: Vec<Complex64>,
    /// `G(δ)` on the x-grid for each cut-off.
    pub levels: Vec<Vec<Complex64>>,
}

/// Grouped integrand at one node and, when requested, its member terms.
#[derive(Debug, Clone, Default)]
pub struct GroupSample {
    pub grouped: Vec<Complex64>,
    pub members: Vec<Vec<Complex64>>,
}

impl GroupSample {
    /// Sample whose grouped value is the sum of the members.
    pub fn from_members(members: Vec<Vec<Complex64>>) -> Self {
        let len = members.first().map_or(0, |m| m.len());
        let mut grouped = vec![Complex64::default(); len];
        for m in &members {
            for (g, v) in grouped.iter_mut().zip(m) {
                *g += v;
            }
        }
        Self { grouped, members }
    }
}

/// `lim_{δ→0} ∫_{δ<|t−t0|<h} G(t) dt` along `deltas`, where `eval(t, members)` returns the
/// grouped integrand and, for the first `member_levels` cut-offs, the member terms.
/// With `one_sided` only `t0 + s` is used.
#[allow(clippy::too_many_arguments)]
pub fn pv_limit(
    t0: f64,
    h: f64,
    deltas: &[f64],
    order: usize,
    one_sided: bool,
    tolerance: f64,
    member_levels: usize,
    eval: impl Fn(f64, bool) -> Result<GroupSample> + Sync,
) -> Result<PvResult> {
    let (u, w) = quad::gauss_legendre(order);
    let sides: &[f64] = if one_sided { &[1.0] } else { &[1.0, -1.0] };
    let mut bounds = vec![h];
    bounds.extend_from_slice(deltas);
    let member_levels = member_levels.min(deltas.len());

    // Nodes of every annulus, in the log variable.
    let mut nodes = Vec::new();
    for level in 0..deltas.len() {
        let (a, b) = (bounds[level + 1].ln(), bounds[level].ln());
        for (&ui, &wi) in u.iter().zip(&w) {
            let s = (0.5 * (a + b) + 0.5 * (b - a) * ui).exp();
            for &side in sides {
                nodes.push((level, t0 + side * s, 0.5 * (b - a) * wi * s));
            }
        }
    }
    let values: Vec<GroupSample> = nodes
        .par_iter()
        .map(|&(level, t, _)| eval(t, level < member_levels))
        .collect::<Result<_>>()?;

    let len = values.first().map_or(0, |v| v.grouped.len());
    let members = values.iter().map(|v| v.members.len()).max().unwrap_or(0);
    let mut annulus = vec![vec![Complex64::default(); len]; deltas.len()];
    let mut member_annulus = vec![vec![vec![Complex64::default(); len]; members]; member_levels];
    let mut abs_annulus = vec![vec![0.0; members]; member_levels];
    for (&(level, _, weight), sample) in nodes.iter().zip(&values) {
        for (a, v) in annulus[level].iter_mut().zip(&sample.grouped) {
            *a += v * weight;
        }
        if level < member_levels {
            if sample.members.len() != members {
                return Err(Error::InvalidArgument(
                    "member count changed inside a group window".into(),
                ));
            }
            for (m, term) in sample.members.iter().enumerate() {
                for (a, v) in member_annulus[level][m].iter_mut().zip(term) {
                    *a += v * weight;
                }
                abs_annulus[level][m] += weight * rms(term);
            }
        }
    }

    let mut levels: Vec<Vec<Complex64>> = Vec::with_capacity(deltas.len());
    let mut grouped = vec![Complex64::default(); len];
    for part in &annulus {
        for (g, v) in grouped.iter_mut().zip(part) {
            *g += v;
        }
        levels.push(grouped.clone());
    }
    let mut member_cum = vec![vec![Complex64::default(); len]; members];
    let mut abs_cum = vec![0.0; members];
    let mut member_signed_norms = vec![Vec::new(); members];
    let mut member_abs_integrals = vec![Vec::new(); members];
    for level in 0..member_levels {
        for m in 0..members {
            for (c, v) in member_cum[m].iter_mut().zip(&member_annulus[level][m]) {
                *c += v;
            }
            abs_cum[m] += abs_annulus[level][m];
            member_signed_norms[m].push(rms(&member_cum[m]));
            member_abs_integrals[m].push(abs_cum[m]);
        }
    }
    let grouped_norms: Vec<f64> = levels.iter().map(|g| rms(g)).collect();
    let differences: Vec<f64> = (0..levels.len())
        .map(|i| {
            if i == 0 {
                grouped_norms[0]
            } else {
                rms_diff(&levels[i], &levels[i - 1])
            }
        })
        .collect();
    let extrapolated = richardson(&levels, deltas);
    let scale = grouped_norms.iter().copied().fold(0.0, f64::max);
    let last = if levels.len() > 1 {
        *differences.last().unwrap()
    } else {
        0.0
    };
    let converged = last <= tolerance * scale || scale == 0.0;
    if !converged {
        return Err(Error::NonConvergence { t0, difference: last });
    }
    Ok(PvResult {
        row: PvRow {
            t0,
            lambda: Complex64::default(),
            members: (0..members).collect(),
            deltas: deltas.to_vec(),
            grouped_norms,
            differences,
            member_levels,
            member_signed_norms,
            member_abs_integrals,
            extrapolated_norm: rms(&extrapolated),
            converged,
        },
        values: extrapolated,
        levels,
    })
}

/// Eliminates the `δ` and `δ²` terms from the last three levels.
fn richardson(levels: &[Vec<Complex64>], deltas: &[f64]) -> Vec<Complex64> {
    let n = levels.len();
    let step = |a: &[Complex64], b: &[Complex64], r: f64| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| (r * y - x) / (r - 1.0)).collect()
    };
    match n {
        0 => Vec::new(),
        1 => levels[0].clone(),
        2 => step(&levels[0], &levels[1], deltas[0] / deltas[1]),
        _ => {
            let (a, b, c) = (&levels[n - 3], &levels[n - 2], &levels[n - 1]);
            let r1 = deltas[n - 3] / deltas[n - 2];
            let r2 = deltas[n - 2] / deltas[n - 1];
            let ab = step(a, b, r1);
            let bc = step(b, c, r2);
            let r = r1 * r2;
            step(&ab, &bc, r)
        }
    }
}

fn rms(v: &[Complex64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

fn rms_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64).sqrt()
}

/// Contribution of the `n`-th eigenvalue (magnitude order at each node), outside ESS groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermContribution {
    pub n: usize,
    pub norm: f64,
}

/// `F_±(λ, f)` at one node of the λ-domain quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpmSample {
    pub t: f64,
    pub n: usize,
    pub lambda: Complex64,
    pub f_plus: Complex64,
    pub f_minus: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub period: f64,
    pub n_max: usize,
    pub k: usize,
    pub x_grid: XGrid,
    pub plan: GroupingPlan,
    /// Sample points in original units.
    pub x: Vec<f64>,
    pub f: Vec<Complex64>,
    pub reconstruction: Vec<Complex64>,
    /// `Σ|f − f_N|² / Σ|f|²` over the x-grid.
    pub residual: f64,
    /// Square root of `residual`.
    pub relative_rms: f64,
    pub terms: Vec<TermContribution>,
    pub pv_convergence: Vec<PvRow>,
    /// Member sets integrated as grouped principal values.
    pub grouped_members: Vec<Vec<usize>>,
    /// Relative energy of `f` outside the first `n_max` free modes.
    pub tail_estimate: f64,
    pub warnings: Vec<String>,
    pub f_pm: Vec<FpmSample>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    mode: Mode,
    period: f64,
    n_max: usize,
    k: usize,
    x_grid: &'a XGrid,
    plan: &'a GroupingPlan,
    residual: f64,
    relative_rms: f64,
    max_abs_error: f64,
    terms: &'a [TermContribution],
    pv_convergence: &'a [PvRow],
    grouped_members: &'a [Vec<usize>],
    tail_estimate: f64,
    warnings: &'a [String],
}

impl ExpansionReport {
    pub fn max_abs_error(&self) -> f64 {
        self.f
            .iter()
            .zip(&self.reconstruction)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Columns `x, re_f, im_f, re_recon, im_recon, abs_err`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "re_f", "im_f", "re_recon", "im_recon", "abs_err"])?;
        for ((x, f), r) in self.x.iter().zip(&self.f).zip(&self.reconstruction) {
            w.write_record([
                x.to_string(),
                f.re.to_string(),
                f.im.to_string(),
                r.re.to_string(),
                r.im.to_string(),
                (f - r).norm().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Residuals, convergence tables and the resolved configuration.
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Summary {
            schema_version: self.schema_version,
            mode: self.mode,
            period: self.period,
            n_max: self.n_max,
            k: self.k,
            x_grid: &self.x_grid,
            plan: &self.plan,
            residual: self.residual,
            relative_rms: self.relative_rms,
            max_abs_error: self.max_abs_error(),
            terms: &self.terms,
            pv_convergence: &self.pv_convergence,
            grouped_members: &self.grouped_members,
            tail_estimate: self.tail_estimate,
            warnings: &self.warnings,
        })?)
    }
}

struct QNode {
    t: f64,
    w: f64,
    /// Centre of the window around 0 or π containing `t`.
    window: Option<f64>,
}

fn panel_nodes(lo: f64, hi: f64, panels: usize, order: usize, window: Option<f64>, out: &mut Vec<QNode>) {
    let width = (hi - lo) / panels as f64;
    for p in 0..panels {
        let panel = Panel::new(lo + p as f64 * width, lo + (p + 1) as f64 * width, order);
        for (&t, &w) in panel.nodes.iter().zip(&panel.weights) {
            out.push(QNode { t, w, window });
        }
    }
}

/// Nodes over `(−π, π]` (or `(0, π)` when `half`) split as `B(h)` plus the windows.
fn plan_nodes(plan: &GroupingPlan, half: bool) -> Vec<QNode> {
    let (h, np, order) = (plan.h, plan.bulk_panels, plan.order);
    let mut out = Vec::new();
    if !half {
        panel_nodes(-PI, -PI + h, 1, order, Some(PI), &mut out);
        panel_nodes(-PI + h, -h, np, order, None, &mut out);
        panel_nodes(-h, 0.0, 1, order, Some(0.0), &mut out);
    }
    panel_nodes(0.0, h, 1, order, Some(0.0), &mut out);
    panel_nodes(h, PI - h, np, order, None, &mut out);
    panel_nodes(PI - h, PI, 1, order, Some(PI), &mut out);
    out
}

/// First `n_max` eigenvalues at `t` (magnitude order) minus the members of `groups`.
fn node_eigenvalues(op: &HillOperator, t: f64, n_max: usize, groups: &[&EssRecord]) -> Result<Vec<(usize, Complex64)>> {
    let lambdas = op.bloch_eigenvalues(t, n_max)?;
    for w in lambdas.windows(2) {
        if (w[0] - w[1]).norm() <= op.merge_tolerance(w[0]) {
            return Err(Error::DegenerateFormula { t, lambda: w[0] });
        }
    }
    let mut keep: Vec<(usize, Complex64)> = lambdas.into_iter().enumerate().collect();
    for g in groups {
        keep.sort_by(|a, b| (a.1 - g.lambda).norm().total_cmp(&(b.1 - g.lambda).norm()));
        keep.drain(..g.member_set.len().min(keep.len()));
        keep.sort_by_key(|p| p.0);
    }
    Ok(keep)
}

/// Adds `weight · c · u(m + j/N)` on the lattice, with `u(m + ξ) = e^{imt} u(ξ)`.
fn accumulate(acc: &mut [Complex64], lattice: &[(i64, usize)], u: &[Complex64], c: Complex64, t: f64) {
    let mut phase_m = i64::MIN;
    let mut phase = Complex64::default();
    for (a, &(m, j)) in acc.iter_mut().zip(lattice) {
        if m != phase_m {
            phase_m = m;
            phase = Complex64::cis(m as f64 * t) * c;
        }
        *a += phase * u[j];
    }
}

/// Relative energy of `f_t` outside the `n_max` free modes of smallest `|2πk + t|`.
fn free_tail(f_t: &[Complex64], t: f64, n_max: usize) -> f64 {
    let n = f_t.len() - 1;
    let periodic: Vec<Complex64> = (0..n)
        .map(|j| f_t[j] * Complex64::cis(-t * j as f64 / n as f64))
        .collect();
    let c = quad::fourier_coefficients(&periodic);
    let mut modes: Vec<(f64, f64)> = c
        .iter()
        .enumerate()
        .map(|(k, z)| ((2.0 * PI * quad::wavenumber(k, n) as f64 + t).abs(), z.norm_sqr()))
        .collect();
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    modes.iter().skip(n_max).map(|m| m.1).sum()
}

struct Prepared {
    tables: Vec<TranslateTable>,
    lattice: Vec<(i64, usize)>,
    k: usize,
}

fn prepare(fs: &[TestFunction], op: &HillOperator, x_grid: &XGrid) -> Result<Prepared> {
    if fs.is_empty() {
        return Err(Error::InvalidArgument("no test functions".into()));
    }
    let period = op.potential().declared_period();
    let grid = op.config().grid_size;
    let k = fs.iter().map(|f| translation_truncation(f, period)).max().unwrap_or(0);
    let tables = fs
        .iter()
        .map(|f| TranslateTable::new(f, period, k, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        tables,
        lattice: x_grid.lattice(grid)?,
        k,
    })
}

/// Per test function: the sampled reconstruction, the per-rank accumulators and the tail.
struct Accumulators {
    recon: Vec<Vec<Complex64>>,
    ranks: Vec<Vec<Vec<Complex64>>>,
    tail: Vec<f64>,
}

impl Accumulators {
    fn new(nf: usize, n_max: usize, len: usize) -> Self {
        Self {
            recon: vec![vec![Complex64::default(); len]; nf],
            ranks: vec![vec![vec![Complex64::default(); len]; n_max]; nf],
            tail: vec![0.0; nf],
        }
    }
}

/// Node contribution: `(rank, lattice values per test function)` and the free tails.
type NodeTerms = (Vec<(usize, Vec<Vec<Complex64>>)>, Vec<f64>);

fn run_nodes(nodes: &[QNode], acc: &mut Accumulators, eval: impl Fn(&QNode) -> Result<NodeTerms> + Sync) -> Result<()> {
    // Fixed chunking and in-order accumulation keep the sums deterministic.
    for chunk in nodes.chunks(16) {
        let done: Vec<NodeTerms> = chunk.par_iter().map(&eval).collect::<Result<_>>()?;
        for (node, (terms, tails)) in chunk.iter().zip(done) {
            let scale = node.w / (2.0 * PI);
            for (rank, per_f) in &terms {
                for (i, v) in per_f.iter().enumerate() {
                    for ((r, q), z) in acc.recon[i].iter_mut().zip(acc.ranks[i][*rank].iter_mut()).zip(v) {
                        *r += z * scale;
                        *q += z * scale;
                    }
                }
            }
            for (tail, v) in acc.tail.iter_mut().zip(tails) {
                *tail += scale * v;
            }
        }
    }
    Ok(())
}

fn t_node_terms(
    op: &HillOperator,
    prep: &Prepared,
    node: &QNode,
    n_max: usize,
    plan: &GroupingPlan,
) -> Result<NodeTerms> {
    let groups = plan.window_groups(node.window);
    let slices: Vec<Vec<Complex64>> = prep.tables.iter().map(|tb| tb.f_t(node.t)).collect();
    let mut terms = Vec::new();
    for (rank, lambda) in node_eigenvalues(op, node.t, n_max, &groups)? {
        let tr = eigen_triple(op, node.t, lambda)?;
        let per_f = slices
            .iter()
            .map(|s| {
                let mut v = vec![Complex64::default(); prep.lattice.len()];
                accumulate(&mut v, &prep.lattice, &tr.psi, tr.coefficient(s), node.t);
                v
            })
            .collect();
        terms.push((rank, per_f));
    }
    let tails = slices.iter().map(|s| free_tail(s, node.t, n_max)).collect();
    Ok((terms, tails))
}

/// Member terms `a_k Ψ_k` of a group at `t`, one vector per member with the test
/// functions laid end to end.
fn group_terms_t(op: &HillOperator, prep: &Prepared, group: &CollisionGroup, t: f64) -> Result<Vec<Vec<Complex64>>> {
    let len = prep.lattice.len();
    let slices: Vec<Vec<Complex64>> = prep.tables.iter().map(|tb| tb.f_t(t)).collect();
    local_eigenvalues(op, t, group.lambda, group.members.len())?
        .into_iter()
        .map(|lambda| {
            let tr = eigen_triple(op, t, lambda)?;
            let mut v = vec![Complex64::default(); len * slices.len()];
            for (i, s) in slices.iter().enumerate() {
                accumulate(
                    &mut v[i * len..(i + 1) * len],
                    &prep.lattice,
                    &tr.psi,
                    tr.coefficient(s),
                    t,
                );
            }
            Ok(v)
        })
        .collect()
}

/// Smallest separation, relative to `1 + |Λ|`, at which two members are still told apart
/// by the shooting discriminant.
const MEMBER_RESOLUTION: f64 = 4e-6;

/// Galerkin eigenvalues at `t` ordered by distance from the group centre.
fn nearest_galerkin(op: &HillOperator, group: &CollisionGroup, t: f64) -> Vec<Complex64> {
    let mut eig = op.galerkin_eigenvalues(t, group.members.len() + 8);
    eig.sort_by(|a, b| (a - group.lambda).norm().total_cmp(&(b - group.lambda).norm()));
    eig
}

/// Number of leading cut-offs at which the members stay resolved on every sampled side.
fn resolved_levels(op: &HillOperator, group: &CollisionGroup, deltas: &[f64], sides: &[f64]) -> usize {
    let k = group.members.len();
    let floor = MEMBER_RESOLUTION * (1.0 + group.lambda.norm());
    deltas
        .iter()
        .take_while(|&&d| {
            sides.iter().all(|&side| {
                let eig = nearest_galerkin(op, group, group.t0 + side * d);
                (0..k).all(|i| (i + 1..k).all(|j| (eig[i] - eig[j]).norm() >= floor))
            })
        })
        .count()
}

/// `Σ_{k∈group} a_k Ψ_k` at `t` through the Riesz projection of the Galerkin matrix,
/// which stays accurate when the members are too close to be separated.
fn group_sum_t(op: &HillOperator, prep: &Prepared, group: &CollisionGroup, t: f64) -> Result<Vec<Complex64>> {
    let k = group.members.len();
    let eig = nearest_galerkin(op, group, t);
    let d_in = eig[..k].iter().map(|z| (z - group.lambda).norm()).fold(0.0, f64::max);
    let d_out = eig.get(k).map_or(f64::INFINITY, |z| (z - group.lambda).norm());
    if d_in >= 0.5 * d_out {
        // The group is not isolated from the rest of the spectrum.
        return Err(Error::DegenerateFormula {
            t,
            lambda: group.lambda,
        });
    }
    let scale = op.potential().scale();
    let radius = scale * (d_in.max(1e-12 * (1.0 + group.lambda.norm())) * d_out).sqrt();
    let truncation = op.truncation_for(k);
    let proj = crate::galerkin::riesz_projector(op.potential(), t, truncation, group.lambda * scale, radius, 64)
        .ok_or(Error::DegenerateFormula {
            t,
            lambda: group.lambda,
        })?;
    let n_basis = proj.nrows();
    let off = (n_basis / 2) as i64;
    let len = prep.lattice.len();
    let mut out = vec![Complex64::default(); len * prep.tables.len()];
    for (i, tb) in prep.tables.iter().enumerate() {
        let f_t = tb.f_t(t);
        let n = f_t.len() - 1;
        let periodic: Vec<Complex64> = (0..n)
            .map(|j| f_t[j] * Complex64::cis(-t * j as f64 / n as f64))
            .collect();
        let c = quad::fourier_coefficients(&periodic);
        let coeffs = nalgebra::DVector::from_fn(n_basis, |r, _| {
            let kk = r as i64 - off;
            c[kk.rem_euclid(n as i64) as usize]
        });
        let p = proj.clone() * coeffs;
        // Back to samples of the quasi-periodic projection on [0, 1].
        let mut bins = vec![Complex64::default(); n];
        for r in 0..n_basis {
            let kk = r as i64 - off;
            bins[kk.rem_euclid(n as i64) as usize] += p[r];
        }
        let mut planner = rustfft::FftPlanner::new();
        planner.plan_fft_inverse(n).process(&mut bins);
        let u: Vec<Complex64> = (0..=n)
            .map(|j| bins[j % n] * Complex64::cis(t * j as f64 / n as f64))
            .collect();
        accumulate(
            &mut out[i * len..(i + 1) * len],
            &prep.lattice,
            &u,
            Complex64::new(1.0, 0.0),
            t,
        );
    }
    Ok(out)
}

fn grouped_t(op: &HillOperator, prep: &Prepared, group: &CollisionGroup, plan: &GroupingPlan) -> Result<PvResult> {
    let member_levels = resolved_levels(op, group, &plan.delta_seq, &[1.0, -1.0]);
    let mut r = pv_limit(
        group.t0,
        plan.h,
        &plan.delta_seq,
        plan.order,
        false,
        plan.cauchy_tolerance,
        member_levels,
        |t, with_members| {
            Ok(GroupSample {
                grouped: group_sum_t(op, prep, group, t)?,
                members: if with_members {
                    group_terms_t(op, prep, group, t)?
                } else {
                    Vec::new()
                },
            })
        },
    )?;
    r.row.lambda = group.lambda;
    r.row.members = group.members.clone();
    Ok(r)
}

/// Grouped principal-value integral `Σ_{k∈group} p.v.∫_{|t−t0|<h} a_k Ψ_k dt` on the x-grid.
pub fn grouped_pv_integral(
    f: &TestFunction,
    op: &HillOperator,
    group: &CollisionGroup,
    plan: &GroupingPlan,
    x_grid: &XGrid,
) -> Result<PvResult> {
    plan.validate()?;
    let prep = prepare(std::slice::from_ref(f), op, x_grid)?;
    grouped_t(op, &prep, group, plan)
}

fn finish(
    mode: Mode,
    op: &HillOperator,
    prep: &Prepared,
    plan: &GroupingPlan,
    n_max: usize,
    x_grid: &XGrid,
    acc: Accumulators,
    pv: &[PvResult],
    f_pm: Vec<FpmSample>,
    residual_target: f64,
) -> Vec<ExpansionReport> {
    let period = op.potential().declared_period();
    let grid = op.config().grid_size;
    let len = prep.lattice.len();
    let x: Vec<f64> = prep
        .lattice
        .iter()
        .map(|&(m, j)| period * (m as f64 + j as f64 / grid as f64))
        .collect();
    let grouped_members: Vec<Vec<usize>> = pv.iter().map(|p| p.row.members.clone()).collect();
    acc.recon
        .into_iter()
        .zip(acc.ranks)
        .zip(acc.tail)
        .enumerate()
        .map(|(i, ((mut recon, ranks), tail))| {
            let table = &prep.tables[i];
            for p in pv {
                for (r, v) in recon.iter_mut().zip(&p.values[i * len..(i + 1) * len]) {
                    *r += v / (2.0 * PI);
                }
            }
            let f: Vec<Complex64> = prep.lattice.iter().map(|&(m, j)| table.value(m, j)).collect();
            let energy: f64 = f.iter().map(|z| z.norm_sqr()).sum();
            let err: f64 = f.iter().zip(&recon).map(|(a, b)| (a - b).norm_sqr()).sum();
            let residual = if energy > 0.0 { err / energy } else { err };
            let tail_estimate = {
                let e = table.energy();
                if e > 0.0 { tail / e } else { 0.0 }
            };
            let mut warnings = Vec::new();
            if tail_estimate > residual_target {
                warnings.push(format!(
                    "truncation: free-mode tail {tail_estimate:.3e} beyond n_max = {n_max} exceeds the residual target {residual_target:.1e}"
                ));
            }
            let pv_convergence = pv
                .iter()
                .map(|p| {
                    let mut row = p.row.clone();
                    let part = |v: &[Complex64]| rms(&v[i * len..(i + 1) * len]);
                    row.grouped_norms = p.levels.iter().map(|l| part(l)).collect();
                    row.extrapolated_norm = part(&p.values);
                    row
                })
                .collect();
            ExpansionReport {
                schema_version: SCHEMA_VERSION,
                mode,
                period,
                n_max,
                k: prep.k,
                x_grid: *x_grid,
                plan: plan.clone(),
                x: x.clone(),
                f,
                reconstruction: recon,
                residual,
                relative_rms: residual.sqrt(),
                terms: ranks
                    .iter()
                    .enumerate()
                    .map(|(n, v)| TermContribution { n, norm: rms(v) })
                    .collect(),
                pv_convergence,
                grouped_members: grouped_members.clone(),
                tail_estimate,
                warnings,
                f_pm: if i == 0 { f_pm.clone() } else { Vec::new() },
            }
        })
        .collect()
}

/// Target used for the truncation warning.
pub const RESIDUAL_TARGET: f64 = 1e-3;

/// Quasimomentum-domain reconstruction of several test functions sharing the spectral data.
pub fn reconstruct_t_many(
    fs: &[TestFunction],
    op: &HillOperator,
    plan: &GroupingPlan,
    n_max: usize,
    x_grid: &XGrid,
) -> Result<Vec<ExpansionReport>> {
    plan.validate()?;
    let prep = prepare(fs, op, x_grid)?;
    let nodes = plan_nodes(plan, false);
    let mut acc = Accumulators::new(fs.len(), n_max, prep.lattice.len());
    run_nodes(&nodes, &mut acc, |node| t_node_terms(op, &prep, node, n_max, plan))?;
    let pv = plan
        .groups()
        .map(|g| grouped_t(op, &prep, &g.group(), plan))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(
        Mode::TDomain,
        op,
        &prep,
        plan,
        n_max,
        x_grid,
        acc,
        &pv,
        Vec::new(),
        RESIDUAL_TARGET,
    ))
}

/// `f = (1/2π)(∫_{B(h)} + ∫_{(−h,h)} + ∫_{(π−h,π+h)}) f_t dt` with grouped principal values
/// for the ESS groups of `plan` and plain integrals for every other band.
pub fn reconstruct_t(
    f: &TestFunction,
    op: &HillOperator,
    plan: &GroupingPlan,
    n_max: usize,
    x_grid: &XGrid,
) -> Result<ExpansionReport> {
    Ok(reconstruct_t_many(std::slice::from_ref(f), op, plan, n_max, x_grid)?.remove(0))
}

/// Term-by-term integration over `(−π, π]` with `panels` Gauss–Legendre panels on each
/// half and no grouping.
pub fn plain_integration(
    f: &TestFunction,
    op: &HillOperator,
    n_max: usize,
    x_grid: &XGrid,
    panels: usize,
    order: usize,
) -> Result<ExpansionReport> {
    let plan = GroupingPlan::new(DEFAULT_H)?.with_layout(panels, order)?;
    let prep = prepare(std::slice::from_ref(f), op, x_grid)?;
    let mut nodes = Vec::new();
    panel_nodes(-PI, 0.0, panels, order, None, &mut nodes);
    panel_nodes(0.0, PI, panels, order, None, &mut nodes);
    let mut acc = Accumulators::new(1, n_max, prep.lattice.len());
    run_nodes(&nodes, &mut acc, |node| t_node_terms(op, &prep, node, n_max, &plan))?;
    Ok(finish(
        Mode::TDomain,
        op,
        &prep,
        &plan,
        n_max,
        x_grid,
        acc,
        &[],
        Vec::new(),
        RESIDUAL_TARGET,
    )
    .remove(0))
}

/// `Φ_{±t}` on one period and `φ(1, λ)`, all in the rescaled variable.
fn kernel_functions(
    op: &HillOperator,
    t: f64,
    lambda: Complex64,
) -> Result<(Vec<Complex64>, Vec<Complex64>, Complex64)> {
    let pair = op.solver().pair(op.potential().to_internal(lambda))?;
    let m = pair.monodromy;
    let phi1 = m[0][1];
    let build = |mu: Complex64| -> Vec<Complex64> {
        let b = mu - m[0][0];
        pair.theta
            .iter()
            .zip(&pair.phi)
            .map(|(th, ph)| phi1 * th + b * ph)
            .collect()
    };
    let scale = 1.0 + m.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    if phi1.norm().max((Complex64::cis(t) - m[0][0]).norm()) <= 1e-9 * scale {
        return Err(Error::DegenerateFormula { t, lambda });
    }
    Ok((build(Complex64::cis(t)), build(Complex64::cis(-t)), phi1))
}

/// `dλ/dt` (rescaled units) along the band through `(t, λ)`, from `F'(λ) λ' = −2 sin t`.
fn band_slope(op: &HillOperator, t: f64, lambda: Complex64) -> Result<Complex64> {
    let pair = op.solver().pair(op.potential().to_internal(lambda))?;
    let d = pair.discriminant_derivative();
    if d.norm() == 0.0 {
        return Err(Error::DegenerateFormula { t, lambda });
    }
    Ok(-2.0 * t.sin() / d)
}

/// Expansion kernel `Φ(x, λ) dλ/dt` on the lattice for each test function, before the
/// branch sign of `p`. Returns the vectors laid end to end and the `F_±` pairs.
fn lambda_kernel(
    op: &HillOperator,
    prep: &Prepared,
    t: f64,
    lambda: Complex64,
) -> Result<(Vec<Vec<Complex64>>, Vec<(Complex64, Complex64)>)> {
    let (phi_p, phi_m, phi1) = kernel_functions(op, t, lambda)?;
    let p = op.p_function(lambda, Branch::Plus)?;
    let slope = band_slope(op, t, lambda)?;
    let n = phi_p.len() - 1;
    let denom = phi1 * p;
    let mut out = Vec::with_capacity(prep.tables.len());
    let mut fpm = Vec::with_capacity(prep.tables.len());
    for tb in &prep.tables {
        let f_plus = quad::bilinear(&tb.f_t(-t)[..n], &phi_p[..n]);
        let f_minus = quad::bilinear(&tb.f_t(t)[..n], &phi_m[..n]);
        let mut v = vec![Complex64::default(); prep.lattice.len()];
        accumulate(&mut v, &prep.lattice, &phi_p, f_minus * slope / denom, t);
        accumulate(&mut v, &prep.lattice, &phi_m, f_plus * slope / denom, -t);
        out.push(v);
        fpm.push((f_plus, f_minus));
    }
    Ok((out, fpm))
}

/// `a(t)Ψ_t + a(−t)Ψ_{−t}` for the eigenvalue `λ`, first test function only.
fn t_pair_terms(op: &HillOperator, prep: &Prepared, t: f64, lambda: Complex64) -> Result<Vec<Complex64>> {
    let mut v = vec![Complex64::default(); prep.lattice.len()];
    for s in [t, -t] {
        let tr = eigen_triple(op, s, lambda)?;
        accumulate(
            &mut v,
            &prep.lattice,
            &tr.psi,
            tr.coefficient(&prep.tables[0].f_t(s)),
            s,
        );
    }
    Ok(v)
}

/// Sign `s` with `λ`-domain `≈ s · t`-domain, or the branch error.
fn branch_sign(lambda_side: &[Complex64], t_side: &[Complex64]) -> Result<f64> {
    let scale = rms(t_side).max(rms(lambda_side));
    if scale == 0.0 {
        return Ok(1.0);
    }
    let neg: Vec<Complex64> = lambda_side.iter().map(|z| -z).collect();
    let plus = rms_diff(lambda_side, t_side) / scale;
    let minus = rms_diff(&neg, t_side) / scale;
    let (sign, mismatch) = if plus <= minus { (1.0, plus) } else { (-1.0, minus) };
    if mismatch > BRANCH_TOLERANCE {
        return Err(Error::BranchInconsistency { mismatch });
    }
    Ok(sign)
}

/// Spectral-parameter reconstruction: `(1/2π)∫_{σ∖γ(h)} Φ dλ` plus principal-value arc
/// integrals, with `λ = λ_n(t)`, `t ∈ (0, π)` and the branch of `p` fixed per arc by
/// matching the quasimomentum integrand at the arc midpoint.
pub fn reconstruct_lambda_many(
    fs: &[TestFunction],
    op: &HillOperator,
    plan: &GroupingPlan,
    n_max: usize,
    x_grid: &XGrid,
) -> Result<Vec<ExpansionReport>> {
    plan.validate()?;
    let prep = prepare(fs, op, x_grid)?;
    let len = prep.lattice.len();

    // Bulk arcs are calibrated at t = π/2, by magnitude rank.
    let t_mid = 0.5 * PI;
    let mid = op.bloch_eigenvalues(t_mid, n_max)?;
    let signs: Vec<f64> = mid
        .par_iter()
        .map(|&lambda| {
            let (kernel, _) = lambda_kernel(op, &prep, t_mid, lambda)?;
            branch_sign(&kernel[0], &t_pair_terms(op, &prep, t_mid, lambda)?)
        })
        .collect::<Result<_>>()?;

    let nodes = plan_nodes(plan, true);
    let mut acc = Accumulators::new(fs.len(), n_max, len);
    let f_pm = std::sync::Mutex::new(Vec::new());
    run_nodes(&nodes, &mut acc, |node| {
        let groups = plan.window_groups(node.window);
        let mut terms = Vec::new();
        for (rank, lambda) in node_eigenvalues(op, node.t, n_max, &groups)? {
            let (kernel, fpm) = lambda_kernel(op, &prep, node.t, lambda)?;
            f_pm.lock().unwrap().push(FpmSample {
                t: node.t,
                n: rank,
                lambda,
                f_plus: fpm[0].0,
                f_minus: fpm[0].1,
            });
            let sign = signs[rank];
            terms.push((
                rank,
                kernel
                    .into_iter()
                    .map(|v| v.into_iter().map(|z| z * sign).collect())
                    .collect(),
            ));
        }
        Ok((terms, vec![0.0; fs.len()]))
    })?;
    let mut f_pm = f_pm.into_inner().unwrap();
    f_pm.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.n.cmp(&b.n)));

    let pv = plan
        .groups()
        .map(|g| grouped_lambda(op, &prep, &g.group(), plan))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(
        Mode::LambdaDomain,
        op,
        &prep,
        plan,
        n_max,
        x_grid,
        acc,
        &pv,
        f_pm,
        RESIDUAL_TARGET,
    ))
}

pub fn reconstruct_lambda(
    f: &TestFunction,
    op: &HillOperator,
    plan: &GroupingPlan,
    n_max: usize,
    x_grid: &XGrid,
) -> Result<ExpansionReport> {
    Ok(reconstruct_lambda_many(std::slice::from_ref(f), op, plan, n_max, x_grid)?.remove(0))
}

fn grouped_lambda(op: &HillOperator, prep: &Prepared, group: &CollisionGroup, plan: &GroupingPlan) -> Result<PvResult> {
    let k = group.members.len();
    let members_at = |t: f64| -> Result<Vec<Vec<Complex64>>> {
        local_eigenvalues(op, t, group.lambda, k)?
            .into_iter()
            .map(|lambda| Ok(lambda_kernel(op, prep, t, lambda)?.0.concat()))
            .collect()
    };
    // The arc is calibrated as a whole, halfway into the window.
    let tc = group.t0 + 0.5 * plan.h;
    let len = prep.lattice.len();
    let mut lambda_side = vec![Complex64::default(); len];
    let mut t_side = vec![Complex64::default(); len];
    for (lambda, kernel) in local_eigenvalues(op, tc, group.lambda, k)?
        .into_iter()
        .zip(members_at(tc)?)
    {
        for (a, v) in lambda_side.iter_mut().zip(&kernel[..len]) {
            *a += v;
        }
        for (a, v) in t_side.iter_mut().zip(t_pair_terms(op, prep, tc, lambda)?) {
            *a += v;
        }
    }
    let sign = branch_sign(&lambda_side, &t_side)?;
    // Below the resolution floor the arcs cannot be split into members; there the
    // grouped integrand is taken from its quasimomentum form a(t)Ψ_t + a(−t)Ψ_{−t}.
    let levels = resolved_levels(op, group, &plan.delta_seq, &[1.0]);
    let mut r = pv_limit(
        group.t0,
        plan.h,
        &plan.delta_seq,
        plan.order,
        true,
        plan.cauchy_tolerance,
        levels,
        |t, with_members| {
            if with_members {
                return Ok(GroupSample::from_members(
                    members_at(t)?
                        .into_iter()
                        .map(|v| v.into_iter().map(|z| z * sign).collect())
                        .collect(),
                ));
            }
            let mut grouped = group_sum_t(op, prep, group, t)?;
            for (g, v) in grouped.iter_mut().zip(group_sum_t(op, prep, group, -t)?) {
                *g += v;
            }
            Ok(GroupSample {
                grouped,
                members: Vec::new(),
            })
        },
    )?;
    r.row.lambda = group.lambda;
    r.row.members = group.members.clone();
    Ok(r)
}

/// `|∫|f|² − (1/2π)∫ Σ_n |a_n(t)|² dt| / ∫|f|²` for a self-adjoint potential, with the
/// first `n_max` bands and the translation truncation of `f`.
pub fn parseval_check(f: &TestFunction, op: &HillOperator, n_max: usize, plan: &GroupingPlan) -> Result<f64> {
    if !op.potential().is_self_adjoint() {
        return Err(Error::NotSelfAdjoint);
    }
    let period = op.potential().declared_period();
    let k = translation_truncation(f, period);
    let table = TranslateTable::new(f, period, k, op.config().grid_size)?;
    let nodes = plan_nodes(plan, false);
    let parts: Vec<f64> = nodes
        .par_iter()
        .map(|node| {
            let f_t = table.f_t(node.t);
            let mut sum = 0.0;
            for (_, lambda) in node_eigenvalues(op, node.t, n_max, &[])? {
                sum += eigen_triple(op, node.t, lambda)?.coefficient(&f_t).norm_sqr();
            }
            Ok(node.w * sum / (2.0 * PI))
        })
        .collect::<Result<_>>()?;
    let rhs: f64 = parts.iter().sum();
    let lhs = table.energy();
    Ok((lhs - rhs).abs() / lhs)
}
