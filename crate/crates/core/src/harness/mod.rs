//! Experiment orchestration: typed configuration, dichotomy sweeps, the
//! closed-form certifier for abstract volume profiles and report emission.

mod commands;
mod config;
mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{g12, to_json};

pub use commands::{
    run_blowup, run_certify, run_kernel_check, run_solve, BlowupTable, CertifyRow, CertifyTable,
    KernelCheckReport, SolveRow, SolveTable,
};
pub use config::{
    default_p_grid, load_config, AbstractSection, ControlsSection, DataSection, EpsilonMode,
    ExperimentConfig, Family, GroupSection, KernelSection, NonlinearitySection, OutputSection,
    ProfileKind, RuleName,
};
pub use sweep::{jensen_probe, run_sweep, Cell, Context, JensenProbe, SweepRow, SweepTable};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// A result that can be emitted as versioned JSON or as CSV with a header.
pub trait Report: Serialize {
    const KIND: &'static str;

    fn write_csv(&self, w: &mut dyn Write) -> Result<()>;

    fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Serialize)]
struct Versioned<'a, R: Serialize> {
    schema_version: u32,
    kind: &'static str,
    report: &'a R,
}

#[derive(Deserialize)]
struct VersionedOwned<R> {
    schema_version: u32,
    kind: String,
    report: R,
}

pub fn render_report<R: Report>(report: &R, format: Format) -> Result<String> {
    if report.is_empty() {
        return Err(Error::EmptyReport);
    }
    match format {
        Format::Json => Ok(to_json(&Versioned {
            schema_version: SCHEMA_VERSION,
            kind: R::KIND,
            report,
        })?),
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is utf-8"))
        }
    }
}

/// Write `dir/<stem>.<ext>` and return its path.
pub fn emit_report<R: Report>(report: &R, dir: &Path, stem: &str, format: Format) -> Result<PathBuf> {
    let text = render_report(report, format)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.{}", format.extension()));
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Parse a JSON report written by [`emit_report`].
pub fn load_report<R: Report + DeserializeOwned>(text: &str) -> Result<R> {
    let v: VersionedOwned<R> = serde_json::from_str(text)?;
    if v.schema_version != SCHEMA_VERSION || v.kind != R::KIND {
        return Err(Error::Validation(format!(
            "expected {} schema {SCHEMA_VERSION}, found {} schema {}",
            R::KIND,
            v.kind,
            v.schema_version
        )));
    }
    Ok(v.report)
}

pub(crate) fn csv_num(v: f64) -> String {
    g12(v)
}

pub(crate) fn csv_opt(v: Option<f64>) -> String {
    v.map(g12).unwrap_or_default()
}

/// RFC 4180 quoting for free-text fields.
pub(crate) fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn snake<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "profile")]
pub enum AbstractProfile {
    /// `‖h_t‖_∞ ≤ C t^{-b/2}` for `t < 1` and `C t^{-a/2}` for `t ≥ 1`.
    Polynomial { a: f64, b: f64 },
    /// Exponential growth with local dimension `d`.
    Exponential { d: f64 },
}

impl AbstractProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AbstractProfile::Polynomial { a, b } => a.is_finite() && a >= 0.0 && b.is_finite() && b >= 0.0,
            AbstractProfile::Exponential { d } => d.is_finite() && d > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbstractVerdict {
    FiniteBound,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractCertificate {
    pub profile: AbstractProfile,
    pub p: f64,
    pub gamma: f64,
    pub k1: f64,
    pub epsilon: f64,
    pub c: f64,
    pub verdict: AbstractVerdict,
    /// Closed-form time integral without the `ε^{p−1}·C` factor.
    pub integral: Option<f64>,
    /// `ε^{p−1}·C·integral`.
    pub bound: Option<f64>,
    /// `1/(K₁(p−1))`.
    pub threshold: f64,
    /// `bound < threshold`.
    pub satisfied: bool,
}

/// `∫_lo^hi s^{-β} ds` for `0 < lo ≤ hi`.
fn power_integral(lo: f64, hi: f64, beta: f64) -> f64 {
    if (beta - 1.0).abs() < 1e-15 {
        (hi / lo).ln()
    } else {
        (hi.powf(1.0 - beta) - lo.powf(1.0 - beta)) / (1.0 - beta)
    }
}

/// Closed-form existence bound for data `ε·h_γ` under an abstract profile.
pub fn certify_abstract(
    profile: AbstractProfile,
    p: f64,
    gamma: f64,
    k1: f64,
    epsilon: f64,
    c: f64,
) -> Result<AbstractCertificate> {
    profile.validate()?;
    if !(gamma > 0.0) {
        return Err(Error::GammaNonpositive(gamma));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidNonlinearity(format!("exponent p = {p} must exceed 1")));
    }
    if !(k1 > 0.0 && k1.is_finite()) {
        return Err(Error::InvalidNonlinearity(format!("K1 = {k1} must be positive")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::NegativeData { min: epsilon });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Validation(format!("kernel constant C = {c} must be positive")));
    }
    let integral = match profile {
        AbstractProfile::Polynomial { a, b } => {
            let alpha = a * (p - 1.0) / 2.0;
            let beta = b * (p - 1.0) / 2.0;
            if alpha <= 1.0 {
                None
            } else {
                let small = if gamma < 1.0 {
                    power_integral(gamma, 1.0, beta)
                } else {
                    0.0
                };
                Some(small + 1.0 / (alpha - 1.0))
            }
        }
        AbstractProfile::Exponential { d } => {
            let delta = d * (p - 1.0) / 2.0;
            if delta <= 1.0 {
                None
            } else {
                Some(gamma.powf(1.0 - delta) / (delta - 1.0))
            }
        }
    };
    let threshold = 1.0 / (k1 * (p - 1.0));
    let bound = integral.map(|i| epsilon.powf(p - 1.0) * c * i);
    Ok(AbstractCertificate {
        profile,
        p,
        gamma,
        k1,
        epsilon,
        c,
        verdict: if integral.is_some() {
            AbstractVerdict::FiniteBound
        } else {
            AbstractVerdict::Divergent
        },
        integral,
        bound,
        threshold,
        satisfied: bound.is_some_and(|b| b < threshold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abstract_examples() {
        let poly = AbstractProfile::Polynomial { a: 4.0, b: 4.0 };
        let crit = certify_abstract(poly, 1.5, 1.0, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(crit.verdict, AbstractVerdict::Divergent);
        assert!(!crit.satisfied);
        let (eps, c) = (0.3, 0.7);
        let fin = certify_abstract(poly, 1.6, 1.0, 1.0, eps, c).unwrap();
        assert_eq!(fin.verdict, AbstractVerdict::FiniteBound);
        let expect = 5.0 * eps.powf(0.6) * c;
        assert!((fin.bound.unwrap() - expect).abs() <= 1e-12 * expect);
        let exp = certify_abstract(AbstractProfile::Exponential { d: 3.0 }, 2.0, 1.0, 1.0, eps, c).unwrap();
        assert_eq!(exp.verdict, AbstractVerdict::FiniteBound);
        assert!((exp.bound.unwrap() - 2.0 * eps * c).abs() < 1e-15);
    }

    #[test]
    fn small_gamma_adds_local_part() {
        let poly = AbstractProfile::Polynomial { a: 4.0, b: 2.0 };
        // β = 1 at p = 2: ∫_γ^1 s^{-1} = -ln γ
        let c = certify_abstract(poly, 2.0, 0.25, 1.0, 1.0, 1.0).unwrap();
        assert!((c.integral.unwrap() - (4f64.ln() + 1.0)).abs() < 1e-14);
        assert!(matches!(
            certify_abstract(poly, 2.0, 0.0, 1.0, 1.0, 1.0),
            Err(Error::GammaNonpositive(_))
        ));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!(matches!("xml".parse::<Format>(), Err(Error::UnknownFormat(_))));
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("plain"), "plain");
    }
}
