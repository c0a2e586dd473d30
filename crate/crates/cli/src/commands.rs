//! One function per subcommand. Each writes its artifacts into the output directory and
//! embeds the resolved configuration in every one of them.

use std::fs;
use std::path::PathBuf;

use hillspec::expansion::{self, GroupingPlan, XGrid};
use hillspec::floquet::{alpha_curve, write_alpha_csv};
use hillspec::hill::{refined_t_grid, uniform_t_grid, write_bands_csv, HillOperator};
use hillspec::potential::parse_complex;
use hillspec::singular::{
    classify_ess, critical_v, distinct_couplings, find_spectral_singularities, groups_from_singularities,
    mathieu_spectrality, write_critical_csv, CriticalSearch, FitWindow,
};
use hillspec::{Error, Result};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::args::Command;
use crate::config::{Domain, RunConfig, SCHEMA_VERSION};
use crate::svg::{line_chart, Chart, Series};
use crate::verify;

/// Where artifacts go and the configuration echoed into them.
pub struct Artifacts {
    dir: PathBuf,
    config: Value,
    echo: String,
}

impl Artifacts {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let mut resolved = config.clone();
        let dir = config.output_dir();
        resolved.output_dir = Some(dir.clone());
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            config: serde_json::to_value(&resolved)?,
            echo: resolved.to_json(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// CSV whose first line is `# config: {...}`.
    fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = format!("# config: {}\n", self.echo).into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    /// Pretty JSON object with `schema_version` and `config` added in front of `fields`.
    fn json(&self, name: &str, fields: Value) -> Result<PathBuf> {
        let mut doc = serde_json::Map::new();
        doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
        doc.insert("config".into(), self.config.clone());
        if let Value::Object(map) = fields {
            for (k, v) in map {
                doc.entry(k).or_insert(v);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn svg(&self, name: &str, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<PathBuf> {
        let chart = Chart {
            title,
            x_label,
            y_label,
            metadata: &self.echo,
        };
        self.write(name, line_chart(&chart, series).as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

/// What a command produced: lines for stdout, files written and whether it succeeded.
#[derive(Debug, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub success: bool,
}

impl Outcome {
    fn ok(lines: Vec<String>, files: Vec<PathBuf>) -> Self {
        Self {
            lines,
            files,
            success: true,
        }
    }
}

/// Machine-readable form of a propagated module error.
pub fn error_json(e: &Error) -> String {
    json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "kind": e.kind(), "message": e.to_string() },
    })
    .to_string()
}

/// Loads the config file if any, then applies the flags.
pub fn resolve(cli: &crate::args::Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.apply(&mut config);
    config.validate()?;
    Ok(config)
}

pub fn run(command: &Command, config: &RunConfig) -> Result<Outcome> {
    let out = Artifacts::new(config)?;
    match command {
        Command::Discriminant { .. } => discriminant(config, &out),
        Command::Bands { .. } => bands(config, &out),
        Command::Alpha { .. } => alpha(config, &out),
        Command::Singularities { .. } => singularities(config, &out),
        Command::CriticalV { .. } => critical(config, &out),
        Command::Spectrality { .. } => spectrality(config, &out),
        Command::Expand { .. } => expand(config, &out),
        Command::Verify => run_verify(&out),
    }
}

fn operator(config: &RunConfig) -> Result<HillOperator> {
    HillOperator::new(&config.potential()?, config.hill())
}

fn files_line(files: &[PathBuf]) -> String {
    let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    format!("wrote {}", names.join(", "))
}

fn finish(mut lines: Vec<String>, files: Vec<PathBuf>) -> Outcome {
    lines.push(files_line(&files));
    Outcome::ok(lines, files)
}

/// Columns `re_lambda, im_lambda, re_f, im_f`.
fn discriminant(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let op = operator(config)?;
    let (lo, hi) = config.lambda_window;
    let n = config.lambda_points;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = Complex64::new(lo + (hi - lo) * i as f64 / (n - 1) as f64, config.lambda_im);
        rows.push((lambda, op.discriminant(lambda)?));
    }
    let csv = out.csv("discriminant.csv", |buf| {
        buf.extend_from_slice(b"re_lambda,im_lambda,re_f,im_f\n");
        for (l, f) in &rows {
            buf.extend_from_slice(format!("{},{},{},{}\n", l.re, l.im, f.re, f.im).as_bytes());
        }
        Ok(())
    })?;
    let series = [
        Series::new("Re F", rows.iter().map(|(l, f)| (l.re, f.re)).collect()),
        Series::new("Im F", rows.iter().map(|(l, f)| (l.re, f.im)).collect()),
        Series::new("+2", vec![(lo, 2.0), (hi, 2.0)]),
        Series::new("-2", vec![(lo, -2.0), (hi, -2.0)]),
    ];
    let title = format!("Hill discriminant, Im λ = {}", config.lambda_im);
    let svg = out.svg("discriminant.svg", &title, "Re λ", "F(λ)", &series)?;
    Ok(finish(vec![format!("{n} points on [{lo}, {hi}]")], vec![csv, svg]))
}

/// Columns `n, t, re_lambda, im_lambda, residual, collision_flag`.
fn bands(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let op = operator(config)?;
    let traced = op.bands(config.bands, &uniform_t_grid(config.t_points))?;
    let csv = out.csv("bands.csv", |buf| write_bands_csv(&traced, buf))?;
    let series: Vec<Series> = traced
        .iter()
        .map(|b| {
            Series::new(
                format!("n = {}", b.band_index),
                b.t_grid.iter().zip(&b.lambdas).map(|(&t, l)| (t, l.re)).collect(),
            )
        })
        .collect();
    let svg = out.svg("bands.svg", "Bloch bands", "t", "Re λ", &series)?;
    let collisions = traced.iter().filter(|b| b.has_collision()).count();
    let lines = vec![format!("{} bands, {collisions} with flagged collisions", traced.len())];
    Ok(finish(lines, vec![csv, svg]))
}

/// Columns `n, t, re_alpha, im_alpha, abs_alpha, projection_norm`.
fn alpha(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let op = operator(config)?;
    let traced = op.bands(config.bands, &refined_t_grid(config.t_points, 8, 4))?;
    let curves = traced.iter().map(|b| alpha_curve(&op, b)).collect::<Result<Vec<_>>>()?;
    let samples: Vec<_> = curves.iter().flatten().copied().collect();
    let csv = out.csv("alpha.csv", |buf| write_alpha_csv(&samples, buf))?;
    let series: Vec<Series> = curves
        .iter()
        .zip(&traced)
        .map(|(c, b)| {
            Series::new(
                format!("n = {}", b.band_index),
                c.iter().map(|s| (s.t, s.alpha.norm().log10())).collect(),
            )
        })
        .collect();
    let svg = out.svg("alpha.svg", "Norming constants", "t", "log10 |α|", &series)?;
    let smallest = samples.iter().map(|s| s.alpha.norm()).fold(f64::INFINITY, f64::min);
    Ok(finish(vec![format!("min |α| = {smallest:.3e}")], vec![csv, svg]))
}

fn singularities(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let op = operator(config)?;
    let found = find_spectral_singularities(&op, config.bands, &refined_t_grid(config.t_points, 8, 4))?;
    let ess = groups_from_singularities(&found, &op)
        .iter()
        .map(|g| classify_ess(&op, g, FitWindow::default()))
        .collect::<Result<Vec<_>>>()?;
    let path = out.json("singularities.json", json!({ "singularities": found, "ess": ess }))?;
    let mut lines: Vec<String> = ess
        .iter()
        .map(|r| {
            format!(
                "t0 = {:.6}, λ = {:.6}, members {:?}: {:?}",
                r.t0, r.lambda, r.member_set, r.verdict
            )
        })
        .collect();
    lines.insert(0, format!("{} singularities in {} groups", found.len(), ess.len()));
    Ok(finish(lines, vec![path]))
}

/// CSV of every detection; the JSON also carries the distinct couplings.
fn critical(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let search = CriticalSearch {
        interval: config.interval,
        hill: config.hill(),
        ..CriticalSearch::default()
    };
    let found = critical_v(&search)?;
    let csv = out.csv("critical_v.csv", |buf| write_critical_csv(&found, buf))?;
    let values = distinct_couplings(found.clone());
    let json = out.json(
        "critical_v.json",
        json!({ "critical_values": values, "detections": found }),
    )?;
    let mut lines: Vec<String> = values.iter().map(|v| format!("V = {v:.12}")).collect();
    if values.is_empty() {
        lines.push(format!(
            "no critical coupling in ({}, {})",
            config.interval.0, config.interval.1
        ));
    }
    Ok(finish(lines, vec![csv, json]))
}

fn spectrality(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let (a, b) = (parse_complex(&config.a)?, parse_complex(&config.b)?);
    let verdict = mathieu_spectrality(a, b, config.exact_alpha, config.n_search)?;
    let path = out.json("spectrality.json", json!({ "verdict": verdict }))?;
    let line = serde_json::to_value(verdict.verdict)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    Ok(finish(vec![line], vec![path]))
}

/// Grouping plan for `expand`: detected ESS groups plus the configured cut-offs.
fn expansion_plan(config: &RunConfig, op: &HillOperator) -> Result<GroupingPlan> {
    let mut plan = GroupingPlan::detect(op, config.n_max, config.h)?;
    if let Some(seq) = &config.delta_seq {
        plan = plan.with_delta_seq(seq.clone())?;
    }
    plan.cauchy_tolerance = config.quadrature_tolerance;
    Ok(plan)
}

/// CSV columns `x, re_f, im_f, re_recon, im_recon, abs_err`.
fn expand(config: &RunConfig, out: &Artifacts) -> Result<Outcome> {
    let op = operator(config)?;
    let f = config.test_function()?;
    let plan = expansion_plan(config, &op)?;
    let x_grid = XGrid::covering(&f, op.potential().declared_period(), config.x_stride);
    let report = match config.domain {
        Domain::T => expansion::reconstruct_t(&f, &op, &plan, config.n_max, &x_grid)?,
        Domain::Lambda => expansion::reconstruct_lambda(&f, &op, &plan, config.n_max, &x_grid)?,
    };
    let csv = out.csv("expansion.csv", |buf| report.write_csv(buf))?;
    let summary: Value = serde_json::from_str(&report.summary_json()?)?;
    let json = out.json("expansion.json", summary)?;
    let mut lines = vec![format!(
        "residual = {:.3e}, max |f - f_N| = {:.3e}, {} grouped sets",
        report.residual,
        report.max_abs_error(),
        report.grouped_members.len()
    )];
    lines.extend(report.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(finish(lines, vec![csv, json]))
}

fn run_verify(out: &Artifacts) -> Result<Outcome> {
    let mut lines = Vec::new();
    let reports = verify::run_all(|r| println!("{}", r.line()));
    let passed = reports.iter().filter(|r| r.pass).count();
    let path = out.json(
        "verify.json",
        json!({ "criteria": reports, "passed": passed, "total": reports.len() }),
    )?;
    lines.push(format!("{passed} of {} criteria passed", reports.len()));
    let mut outcome = finish(lines, vec![path]);
    outcome.success = passed == reports.len();
    Ok(outcome)
}
