//! Run configuration: a JSON file, then command-line overrides.

use std::path::{Path, PathBuf};

use hillspec::expansion::{self, GroupingPlan, TestFunction, DEFAULT_H, DEFAULT_N_MAX};
use hillspec::fundsol::DEFAULT_GRID_SIZE;
use hillspec::hill::{HillConfig, DEFAULT_GALERKIN_TRUNCATION, DEFAULT_MERGE_FACTOR, DEFAULT_ROOT_TOLERANCE};
use hillspec::{Error, PeriodicPotential, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "HILLSPEC_OUT";

pub const MIN_GRID_SIZE: usize = 64;
pub const MIN_T_POINTS: usize = 8;

/// A built-in name such as `mathieu(1, 2)` or an explicit coefficient list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Builtin(String),
    Coefficients { period: f64, coeffs: Vec<(i64, f64, f64)> },
}

impl PotentialSpec {
    pub fn build(&self) -> Result<PeriodicPotential> {
        match self {
            PotentialSpec::Builtin(s) => PeriodicPotential::parse_builtin(s),
            PotentialSpec::Coefficients { period, coeffs } => {
                PeriodicPotential::new(coeffs.iter().map(|&(m, re, im)| (m, Complex64::new(re, im))), *period)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    T,
    Lambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub potential: PotentialSpec,
    /// Shooting grid per period.
    pub grid_size: usize,
    /// Uniform quasimomentum points for band, α and singularity scans.
    pub t_points: usize,
    /// Every `x_stride`-th shooting grid point is reported by `expand`.
    pub x_stride: usize,
    pub n_max: usize,
    /// Translation truncation; at least the value the test function needs.
    pub k: Option<usize>,
    pub h: f64,
    pub delta_seq: Option<Vec<f64>>,
    pub root_tolerance: f64,
    /// Cauchy tolerance for grouped principal values.
    pub quadrature_tolerance: f64,
    pub merge_factor: f64,
    pub galerkin_truncation: usize,
    pub output_dir: Option<PathBuf>,

    /// Real λ window for `discriminant`.
    pub lambda_window: (f64, f64),
    pub lambda_points: usize,
    /// Constant imaginary part of the λ line for `discriminant`.
    pub lambda_im: f64,
    /// Number of bands for `bands`, `alpha` and `singularities`.
    pub bands: usize,
    /// Coupling interval for `critical-v`.
    pub interval: (f64, f64),
    /// Mathieu amplitudes for `spectrality`.
    pub a: String,
    pub b: String,
    /// Exact `arg(ab)/π = m/q` for `spectrality`.
    pub exact_alpha: Option<(i64, u64)>,
    pub n_search: u64,
    /// Test function for `expand`.
    pub function: String,
    pub domain: Domain,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            potential: PotentialSpec::Builtin("mathieu(1, 2)".into()),
            grid_size: DEFAULT_GRID_SIZE,
            t_points: 64,
            x_stride: 16,
            n_max: DEFAULT_N_MAX,
            k: None,
            h: DEFAULT_H,
            delta_seq: None,
            root_tolerance: DEFAULT_ROOT_TOLERANCE,
            quadrature_tolerance: expansion::CAUCHY_TOLERANCE,
            merge_factor: DEFAULT_MERGE_FACTOR,
            galerkin_truncation: DEFAULT_GALERKIN_TRUNCATION,
            output_dir: None,
            lambda_window: (-10.0, 100.0),
            lambda_points: 400,
            lambda_im: 0.0,
            bands: 4,
            interval: (0.3, 1.0),
            a: "1".into(),
            b: "1".into(),
            exact_alpha: None,
            n_search: 1000,
            function: "gaussian(0.5, 0.1)".into(),
            domain: Domain::T,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        for (name, v) in [
            ("root_tolerance", self.root_tolerance),
            ("quadrature_tolerance", self.quadrature_tolerance),
            ("merge_factor", self.merge_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.grid_size < MIN_GRID_SIZE {
            return bad(format!("grid_size must be at least {MIN_GRID_SIZE}"));
        }
        if self.t_points < MIN_T_POINTS {
            return bad(format!("t_points must be at least {MIN_T_POINTS}"));
        }
        if self.x_stride == 0 || self.x_stride > self.grid_size {
            return bad(format!("x_stride must be in 1..={}", self.grid_size));
        }
        if self.n_max == 0 || self.bands == 0 {
            return bad("n_max and bands must be positive".into());
        }
        if self.lambda_points < 2 || !(self.lambda_window.0 < self.lambda_window.1) {
            return bad("lambda_window must be increasing with at least two points".into());
        }
        if !(self.interval.0 < self.interval.1) {
            return bad("interval must be increasing".into());
        }
        self.plan()?;
        Ok(())
    }

    pub fn potential(&self) -> Result<PeriodicPotential> {
        self.potential.build()
    }

    pub fn hill(&self) -> HillConfig {
        HillConfig {
            grid_size: self.grid_size,
            root_tolerance: self.root_tolerance,
            merge_factor: self.merge_factor,
            galerkin_truncation: self.galerkin_truncation,
            ..HillConfig::default()
        }
    }

    /// Grouping plan without detected groups.
    pub fn plan(&self) -> Result<GroupingPlan> {
        let mut plan = GroupingPlan::new(self.h)?;
        if let Some(seq) = &self.delta_seq {
            plan = plan.with_delta_seq(seq.clone())?;
        }
        plan.cauchy_tolerance = self.quadrature_tolerance;
        Ok(plan)
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        let f = TestFunction::parse(&self.function)?;
        if let Some(k) = self.k {
            let period = self.potential()?.declared_period();
            let need = expansion::translation_truncation(&f, period);
            if k < need {
                let (lo, hi) = f.support();
                return Err(Error::SupportOverflow { lo, hi, k });
            }
        }
        Ok(f)
    }

    /// Flag, then config file, then `HILLSPEC_OUT`, then the working directory.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Parses an exact ratio `m/q` with `q > 0`.
pub fn parse_ratio(text: &str) -> Result<(i64, u64)> {
    let bad = || Error::Parse(format!("expected m/q with q > 0, got `{text}`"));
    let (m, q) = text.split_once('/').ok_or_else(bad)?;
    let m: i64 = m.trim().parse().map_err(|_| bad())?;
    let q: u64 = q.trim().parse().map_err(|_| bad())?;
    if q == 0 {
        return Err(bad());
    }
    Ok((m, q))
}
