//! Command-line flags. Every flag overrides the matching field of the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_ratio, Domain, PotentialSpec, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hillspec",
    version,
    about = "Spectral expansion for periodic Schrödinger operators with complex potentials"
)]
pub struct Cli {
    /// JSON run configuration; flags take precedence over its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// Output directory [env: HILLSPEC_OUT, default: .]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Built-in potential: `zero`, `mathieu(a, b)` or `optical(V)`.
    #[arg(long, global = true)]
    pub potential: Option<String>,
    #[arg(long, global = true)]
    pub grid_size: Option<usize>,
    #[arg(long, global = true)]
    pub t_points: Option<usize>,
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    #[arg(long, global = true)]
    pub root_tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub merge_factor: Option<f64>,
    #[arg(long, global = true)]
    pub galerkin_truncation: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hill discriminant F(λ) along a line in the λ-plane (CSV + SVG).
    Discriminant {
        #[arg(long)]
        lambda_min: Option<f64>,
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long)]
        lambda_points: Option<usize>,
        /// Imaginary part of the λ line.
        #[arg(long, allow_hyphen_values = true)]
        lambda_im: Option<f64>,
    },
    /// Bloch band traces over (−π, π] (CSV + SVG).
    Bands {
        #[arg(long)]
        bands: Option<usize>,
    },
    /// Norming constants α_n(t) and projection norms (CSV + SVG).
    Alpha {
        #[arg(long)]
        bands: Option<usize>,
    },
    /// Spectral singularities and their classification (JSON).
    Singularities {
        #[arg(long)]
        bands: Option<usize>,
    },
    /// Critical couplings V of the optical potential in an interval (CSV + JSON).
    CriticalV {
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
    },
    /// Spectrality verdict for the Mathieu operator (JSON).
    Spectrality {
        #[arg(long, allow_hyphen_values = true)]
        a: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        b: Option<String>,
        /// Exact arg(ab)/π as `m/q`.
        #[arg(long, value_parser = ratio, allow_hyphen_values = true)]
        exact_alpha: Option<(i64, u64)>,
        #[arg(long)]
        n_search: Option<u64>,
    },
    /// Reconstruct a test function from its spectral expansion (CSV + JSON).
    Expand {
        /// `gaussian(c, w)` or `indicator(a, b)`.
        #[arg(long)]
        function: Option<String>,
        #[arg(long, value_enum)]
        domain: Option<Domain>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        h: Option<f64>,
        /// Comma-separated decreasing cut-offs below h.
        #[arg(long, value_delimiter = ',')]
        delta_seq: Option<Vec<f64>>,
        #[arg(long)]
        quadrature_tolerance: Option<f64>,
        #[arg(long)]
        x_stride: Option<usize>,
    },
    /// Run the acceptance suite (JSON).
    Verify,
}

fn ratio(s: &str) -> Result<(i64, u64), String> {
    parse_ratio(s).map_err(|e| e.to_string())
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

impl Cli {
    /// Applies the flags on top of `config`.
    pub fn apply(&self, config: &mut RunConfig) {
        let c = &self.common;
        if c.out.is_some() {
            config.output_dir = c.out.clone();
        }
        set(&mut config.potential, c.potential.clone().map(PotentialSpec::Builtin));
        set(&mut config.grid_size, c.grid_size);
        set(&mut config.t_points, c.t_points);
        set(&mut config.n_max, c.n_max);
        set(&mut config.root_tolerance, c.root_tolerance);
        set(&mut config.merge_factor, c.merge_factor);
        set(&mut config.galerkin_truncation, c.galerkin_truncation);
        match &self.command {
            Command::Discriminant {
                lambda_min,
                lambda_max,
                lambda_points,
                lambda_im,
            } => {
                set(&mut config.lambda_window.0, *lambda_min);
                set(&mut config.lambda_window.1, *lambda_max);
                set(&mut config.lambda_points, *lambda_points);
                set(&mut config.lambda_im, *lambda_im);
            }
            Command::Bands { bands } | Command::Alpha { bands } | Command::Singularities { bands } => {
                set(&mut config.bands, *bands);
            }
            Command::CriticalV { from, to } => {
                set(&mut config.interval.0, *from);
                set(&mut config.interval.1, *to);
            }
            Command::Spectrality {
                a,
                b,
                exact_alpha,
                n_search,
            } => {
                set(&mut config.a, a.clone());
                set(&mut config.b, b.clone());
                if exact_alpha.is_some() {
                    config.exact_alpha = *exact_alpha;
                }
                set(&mut config.n_search, *n_search);
            }
            Command::Expand {
                function,
                domain,
                k,
                h,
                delta_seq,
                quadrature_tolerance,
                x_stride,
            } => {
                set(&mut config.function, function.clone());
                set(&mut config.domain, *domain);
                if k.is_some() {
                    config.k = *k;
                }
                set(&mut config.h, *h);
                if delta_seq.is_some() {
                    config.delta_seq = delta_seq.clone();
                }
                set(&mut config.quadrature_tolerance, *quadrature_tolerance);
                set(&mut config.x_stride, *x_stride);
            }
            Command::Verify => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("hillspec").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_the_file() {
        let mut config = RunConfig::from_json(r#"{"bands": 7, "potential": "zero", "h": 0.05}"#).unwrap();
        parse(&["bands", "--bands", "3", "--potential", "optical(0.5)"]).apply(&mut config);
        assert_eq!(config.bands, 3);
        assert_eq!(config.potential, PotentialSpec::Builtin("optical(0.5)".into()));
        assert_eq!(config.h, 0.05);
    }

    #[test]
    fn expand_and_spectrality_flags() {
        let mut config = RunConfig::default();
        parse(&["expand", "--domain", "lambda", "--delta-seq", "0.01,0.005", "--k", "3"]).apply(&mut config);
        assert_eq!(config.domain, Domain::Lambda);
        assert_eq!(config.delta_seq, Some(vec![0.01, 0.005]));
        assert_eq!(config.k, Some(3));
        parse(&["spectrality", "--a", "-1", "--exact-alpha", "1/3"]).apply(&mut config);
        assert_eq!(config.a, "-1");
        assert_eq!(config.exact_alpha, Some((1, 3)));
    }

    #[test]
    fn bad_ratios_are_usage_errors() {
        let r = Cli::try_parse_from(["hillspec", "spectrality", "--exact-alpha", "1/0"]);
        assert!(r.is_err());
    }
}
