//! Complex periodic potentials as finite Fourier series.
//!
//! A potential with declared period `ρ` is stored as amplitudes `c_m` of
//! `q(x) = Σ c_m e^{i2πm x/ρ}`. Internally every problem is posed on the unit
//! period: substituting `x = ρ s` turns `-y'' + q y = λ y` into
//! `-y_ss + ρ² q y = ρ² λ y`, so the solvers see the amplitudes `ρ² c_m` and
//! eigenvalues `ρ² λ`. [`PeriodicPotential::scale`] is that factor `ρ²`, and
//! everything reported to users is divided by it again.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitudes below this magnitude are dropped on construction.
pub const DROP_TOLERANCE: f64 = 1e-14;

/// Where a potential came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialTag {
    /// `a e^{i2πx} + b e^{-i2πx}` on the unit period.
    Mathieu {
        a: [f64; 2],
        b: [f64; 2],
    },
    /// `4cos²x + 4iV sin 2x` on the period π.
    Optical {
        v: f64,
    },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPotential {
    coeffs: BTreeMap<i64, Complex64>,
    declared_period: f64,
    scale: f64,
    tag: PotentialTag,
}

impl PeriodicPotential {
    /// Builds a potential from harmonic amplitudes and a positive period.
    pub fn new(coeffs: impl IntoIterator<Item = (i64, Complex64)>, period: f64) -> Result<Self> {
        Self::with_tag(coeffs, period, PotentialTag::Custom)
    }

    fn with_tag(coeffs: impl IntoIterator<Item = (i64, Complex64)>, period: f64, tag: PotentialTag) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "period must be positive and finite, got {period}"
            )));
        }
        let mut map = BTreeMap::new();
        for (m, c) in coeffs {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite amplitude for harmonic {m}")));
            }
            *map.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        map.retain(|_, c| c.norm() >= DROP_TOLERANCE);
        Ok(Self {
            coeffs: map,
            declared_period: period,
            scale: period * period,
            tag,
        })
    }

    pub fn zero() -> Self {
        Self {
            coeffs: BTreeMap::new(),
            declared_period: 1.0,
            scale: 1.0,
            tag: PotentialTag::Custom,
        }
    }

    /// The Mathieu-type potential `a e^{i2πx} + b e^{-i2πx}` on the unit period.
    pub fn mathieu(a: Complex64, b: Complex64) -> Self {
        Self::with_tag(
            [(1, a), (-1, b)],
            1.0,
            PotentialTag::Mathieu {
                a: [a.re, a.im],
                b: [b.re, b.im],
            },
        )
        .expect("unit period is valid")
    }

    /// The PT-symmetric optical potential `2 + (1+2V)e^{i2x} + (1-2V)e^{-i2x}` of period π.
    pub fn optical(v: f64) -> Result<Self> {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "optical potential needs V >= 0, got {v}"
            )));
        }
        Self::with_tag(
            [
                (0, Complex64::new(2.0, 0.0)),
                (1, Complex64::new(1.0 + 2.0 * v, 0.0)),
                (-1, Complex64::new(1.0 - 2.0 * v, 0.0)),
            ],
            PI,
            PotentialTag::Optical { v },
        )
    }

    pub fn coeffs(&self) -> &BTreeMap<i64, Complex64> {
        &self.coeffs
    }

    pub fn coeff(&self, m: i64) -> Complex64 {
        self.coeffs.get(&m).copied().unwrap_or_default()
    }

    pub fn declared_period(&self) -> f64 {
        self.declared_period
    }

    /// Eigenvalue multiplier `period²` between user units and unit-period units.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn tag(&self) -> PotentialTag {
        self.tag
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn max_harmonic(&self) -> usize {
        self.coeffs.keys().map(|m| m.unsigned_abs() as usize).max().unwrap_or(0)
    }

    /// Amplitude of harmonic `m` as seen by the unit-period solvers.
    pub fn internal_coeff(&self, m: i64) -> Complex64 {
        self.coeff(m) * self.scale
    }

    /// `Σ c_m e^{i2πmx}` at the normalized coordinate `x`.
    pub fn evaluate(&self, x: f64) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(&m, &c)| c * Complex64::cis(TAU * m as f64 * x))
            .sum()
    }

    /// The potential at a point of the original (unscaled) line.
    pub fn evaluate_original(&self, x: f64) -> Complex64 {
        self.evaluate(x / self.declared_period)
    }

    /// The unit-period potential `scale · q` seen by the solvers.
    pub fn internal_value(&self, x: f64) -> Complex64 {
        self.evaluate(x) * self.scale
    }

    /// True when `c_{-m} = conj(c_m)` for every harmonic, i.e. `q` is real-valued.
    pub fn is_self_adjoint(&self) -> bool {
        let norm = self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max);
        let tol = 1e-13 * norm.max(1.0);
        self.coeffs
            .iter()
            .all(|(&m, &c)| (self.coeff(-m) - c.conj()).norm() <= tol)
    }

    /// The potential `conj(q)` of the formal adjoint.
    pub fn conjugate(&self) -> Self {
        let coeffs = self.coeffs.iter().map(|(&m, &c)| (-m, c.conj())).collect();
        Self {
            coeffs,
            declared_period: self.declared_period,
            scale: self.scale,
            tag: PotentialTag::Custom,
        }
    }

    /// Eigenvalue in user units from one in unit-period units.
    pub fn to_user(&self, internal: Complex64) -> Complex64 {
        internal / self.scale
    }

    pub fn to_internal(&self, user: Complex64) -> Complex64 {
        user * self.scale
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PotentialJson::from(self)).expect("potential serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PotentialJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    /// Parses the built-in names used on the command line: `zero`,
    /// `mathieu(a, b)` and `optical(V)`. Amplitudes accept `1`, `-2.5`, `1+2i`, `0.5i`.
    pub fn parse_builtin(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("zero") {
            return Ok(Self::zero());
        }
        let (name, args) = split_call(spec)?;
        match name.to_ascii_lowercase().as_str() {
            "mathieu" => {
                let [a, b] = two_args(&args)?;
                Ok(Self::mathieu(parse_complex(a)?, parse_complex(b)?))
            }
            "optical" => {
                if args.len() != 1 {
                    return Err(Error::Parse(format!("optical takes one argument: {spec}")));
                }
                let v: f64 = args[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad V in {spec}")))?;
                Self::optical(v)
            }
            other => Err(Error::Parse(format!("unknown potential `{other}`"))),
        }
    }
}

impl fmt::Display for PeriodicPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            PotentialTag::Mathieu { a, b } => {
                write!(f, "mathieu({}{:+}i, {}{:+}i)", a[0], a[1], b[0], b[1])
            }
            PotentialTag::Optical { v } => write!(f, "optical({v})"),
            PotentialTag::Custom if self.is_zero() => write!(f, "zero"),
            PotentialTag::Custom => write!(
                f,
                "custom[{} harmonics, period {}]",
                self.coeffs.len(),
                self.declared_period
            ),
        }
    }
}

/// On-disk form: `{"period": ρ, "coeffs": [[m, re, im], ...], "tag": {...}}`.
#[derive(Debug, Serialize, Deserialize)]
struct PotentialJson {
    period: f64,
    coeffs: Vec<(i64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<PotentialTag>,
}

impl From<&PeriodicPotential> for PotentialJson {
    fn from(q: &PeriodicPotential) -> Self {
        Self {
            period: q.declared_period,
            coeffs: q.coeffs.iter().map(|(&m, c)| (m, c.re, c.im)).collect(),
            tag: Some(q.tag),
        }
    }
}

impl TryFrom<PotentialJson> for PeriodicPotential {
    type Error = Error;

    fn try_from(raw: PotentialJson) -> Result<Self> {
        let coeffs = raw.coeffs.into_iter().map(|(m, re, im)| (m, Complex64::new(re, im)));
        PeriodicPotential::with_tag(coeffs, raw.period, raw.tag.unwrap_or(PotentialTag::Custom))
    }
}

pub(crate) fn split_call(spec: &str) -> Result<(&str, Vec<&str>)> {
    let open = spec
        .find('(')
        .ok_or_else(|| Error::Parse(format!("expected name(args): {spec}")))?;
    let inner = spec[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::Parse(format!("missing closing parenthesis: {spec}")))?;
    Ok((spec[..open].trim(), inner.split(',').collect()))
}

fn two_args<'a>(args: &[&'a str]) -> Result<[&'a str; 2]> {
    match args {
        [a, b] => Ok([a, b]),
        _ => Err(Error::Parse(format!("expected two arguments, got {}", args.len()))),
    }
}

/// Parses `re`, `im i`, or `re±im i`.
pub fn parse_complex(text: &str) -> Result<Complex64> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Parse(format!("bad complex number `{text}`"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return s.parse::<f64>().map(|re| Complex64::new(re, 0.0)).map_err(|_| bad());
    };
    // Split at the last sign that is not the leading sign and not part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        other => other.parse::<f64>().map_err(|_| bad())?,
    };
    let re = re.parse::<f64>().map_err(|_| bad())?;
    if !(re.is_finite() && im.is_finite()) {
        return Err(bad());
    }
    Ok(Complex64::new(re, im))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_coefficient_gives_zero_potential() {
        let q = PeriodicPotential::new([(0, c(0.0, 0.0))], 1.0).unwrap();
        assert!(q.is_zero());
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.evaluate(0.37), c(0.0, 0.0));
    }

    #[test]
    fn non_positive_period_is_rejected() {
        assert!(matches!(
            PeriodicPotential::new([(1, c(1.0, 0.0))], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(PeriodicPotential::new([(1, c(1.0, 0.0))], -2.0).is_err());
        assert!(PeriodicPotential::new([(1, c(1.0, 0.0))], f64::NAN).is_err());
    }

    #[test]
    fn mathieu_coefficients() {
        let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(2.0, 0.0));
        assert_eq!(q.coeff(1), c(1.0, 0.0));
        assert_eq!(q.coeff(-1), c(2.0, 0.0));
        assert!(!q.is_self_adjoint());
        let q = PeriodicPotential::mathieu(c(1.0, 0.0), c(1.0, 0.0));
        assert!(q.is_self_adjoint());
        assert!((q.evaluate(0.0) - c(2.0, 0.0)).norm() < 1e-15);
        assert!((q.evaluate(0.25) - c((TAU * 0.25).cos() * 2.0, 0.0)).norm() < 1e-15);
        assert!(PeriodicPotential::mathieu(c(0.0, 0.0), c(0.0, 0.0)).is_zero());
    }

    #[test]
    fn optical_coefficients() {
        let q = PeriodicPotential::optical(0.0).unwrap();
        assert!(q.is_self_adjoint());
        assert!((q.scale() - PI * PI).abs() < 1e-15);
        let q = PeriodicPotential::optical(0.5).unwrap();
        assert_eq!(q.coeffs().len(), 2, "lower harmonic dropped at V = 1/2");
        assert!(q.evaluate_original(PI / 2.0).norm() < 1e-14);
        let q = PeriodicPotential::optical(1.0).unwrap();
        assert_eq!(q.coeff(0), c(2.0, 0.0));
        assert_eq!(q.coeff(1), c(3.0, 0.0));
        assert_eq!(q.coeff(-1), c(-1.0, 0.0));
        assert!(PeriodicPotential::optical(-0.1).is_err());
    }

    #[test]
    fn optical_matches_trigonometric_form() {
        for &v in &[0.0, 0.3, 0.888437] {
            let q = PeriodicPotential::optical(v).unwrap();
            for i in 0..20 {
                let x = -1.3 + 0.37 * i as f64;
                let direct = c(4.0 * x.cos().powi(2), 4.0 * v * (2.0 * x).sin());
                assert!((q.evaluate_original(x) - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let q = PeriodicPotential::optical(0.888437).unwrap();
        let back = PeriodicPotential::from_json(&q.to_json()).unwrap();
        assert_eq!(q, back);
        let raw = r#"{"period": 2.0, "coeffs": [[1, 0.5, -1.0], [-3, 2.0, 0.0]]}"#;
        let q = PeriodicPotential::from_json(raw).unwrap();
        assert_eq!(q.scale(), 4.0);
        assert_eq!(q.coeff(-3), c(2.0, 0.0));
        assert_eq!(q.tag(), PotentialTag::Custom);
        assert!(PeriodicPotential::from_json(r#"{"period": 0, "coeffs": []}"#).is_err());
    }

    #[test]
    fn builtin_specs() {
        assert!(PeriodicPotential::parse_builtin("zero").unwrap().is_zero());
        let q = PeriodicPotential::parse_builtin("mathieu(1, 2-0.5i)").unwrap();
        assert_eq!(q.coeff(-1), c(2.0, -0.5));
        let q = PeriodicPotential::parse_builtin("optical(0.5)").unwrap();
        assert_eq!(q.tag(), PotentialTag::Optical { v: 0.5 });
        assert!(PeriodicPotential::parse_builtin("mathieu(1)").is_err());
        assert!(PeriodicPotential::parse_builtin("nope(1)").is_err());
        assert!(PeriodicPotential::parse_builtin("optical(0.5").is_err());
    }

    #[test]
    fn complex_parsing() {
        assert_eq!(parse_complex("1").unwrap(), c(1.0, 0.0));
        assert_eq!(parse_complex("-2.5").unwrap(), c(-2.5, 0.0));
        assert_eq!(parse_complex("1+2i").unwrap(), c(1.0, 2.0));
        assert_eq!(parse_complex("0.5i").unwrap(), c(0.0, 0.5));
        assert_eq!(parse_complex("-i").unwrap(), c(0.0, -1.0));
        assert_eq!(parse_complex("1e-3-2e+1i").unwrap(), c(1e-3, -20.0));
        assert!(parse_complex("").is_err());
        assert!(parse_complex("1+").is_err());
        assert!(parse_complex("abc").is_err());
    }
}
