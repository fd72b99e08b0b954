//! Mild solutions `u(t) = e^{−tL}u₀ + ∫₀^t e^{−(t−s)L} f(u(s)) ds` via the
//! monotone Picard sequence, the global-existence certificate and the
//! barrier that dominates every iterate.

mod certificate;
mod picard;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

pub use certificate::{
    epsilon_threshold, existence_condition, existence_condition_with, omega_curve,
    partial_integrals, EpsilonSearch, ExistenceCertificate, ExistenceOptions, SupOrbit, Verdict,
};
pub use picard::{
    decay_envelope_check, fixed_point_residual, picard_solve, picard_solve_with, sandwich_check,
    small_data_generator, EnvelopeReport, MildSolution, MildSummary, PicardOptions, SandwichReport,
    SnapshotSummary,
};

/// Evaluation rule for `f`.
#[derive(Clone)]
pub enum Rule {
    /// `f(u) = k·u^p`.
    Power(f64),
    /// `f ≡ 0`.
    Zero,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rule::Power(k) => write!(f, "Power({k})"),
            Rule::Zero => write!(f, "Zero"),
            Rule::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// `f` with exponent `p` and power bounds `K₂u^p ≤ f(u) ≤ K₁u^p`.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    pub p: f64,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub rule: Rule,
}

/// Serializable description used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonlinearitySummary {
    pub p: f64,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub rule: &'static str,
}

impl Nonlinearity {
    /// `f(u) = k·u^p`, so `K₁ = K₂ = k`.
    pub fn power(p: f64, k: f64) -> Result<Self> {
        Self::new(p, Some(k), Some(k), Rule::Power(k))
    }

    /// `f ≡ 0` with a nominal upper constant for the certificate.
    pub fn zero(p: f64, k1: f64) -> Result<Self> {
        Self::new(p, Some(k1), None, Rule::Zero)
    }

    pub fn custom<F>(p: f64, k1: Option<f64>, k2: Option<f64>, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(p, k1, k2, Rule::Custom(Arc::new(f)))
    }

    pub fn new(p: f64, k1: Option<f64>, k2: Option<f64>, rule: Rule) -> Result<Self> {
        let nl = Self { p, k1, k2, rule };
        nl.validate()?;
        Ok(nl)
    }

    /// `p > 1`, positive constants with `K₂ ≤ K₁`, and `f` nonnegative,
    /// nondecreasing and within its power bounds on a geometric sample of
    /// `[1e-6, 1e6]`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidNonlinearity(m));
        if !(self.p > 1.0 && self.p.is_finite()) {
            return bad(format!("exponent p = {} must exceed 1", self.p));
        }
        for (name, k) in [("K1", self.k1), ("K2", self.k2)] {
            if let Some(k) = k {
                if !(k > 0.0 && k.is_finite()) {
                    return bad(format!("{name} = {k} must be positive"));
                }
            }
        }
        if let (Some(k1), Some(k2)) = (self.k1, self.k2) {
            if k2 > k1 {
                return bad(format!("K2 = {k2} exceeds K1 = {k1}"));
            }
        }
        if let Rule::Power(k) = self.rule {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("power coefficient {k} must be positive"));
            }
        }
        let mut prev = self.eval(0.0);
        if !(prev >= 0.0) {
            return bad(format!("f(0) = {prev} is negative"));
        }
        for i in 0..=240 {
            let u = 10f64.powf(-6.0 + 12.0 * i as f64 / 240.0);
            let v = self.eval(u);
            let up = u.powf(self.p);
            if !(v >= 0.0) {
                return bad(format!("f({u}) = {v} is negative"));
            }
            if v < prev * (1.0 - 1e-12) {
                return bad(format!("f decreases near u = {u}"));
            }
            if let Some(k1) = self.k1 {
                if v > k1 * up * (1.0 + 1e-9) {
                    return bad(format!("f({u}) = {v} exceeds K1·u^p"));
                }
            }
            if let Some(k2) = self.k2 {
                if v < k2 * up * (1.0 - 1e-9) {
                    return bad(format!("f({u}) = {v} is below K2·u^p"));
                }
            }
            prev = v;
        }
        Ok(())
    }

    /// `f(max(u, 0))`; negative round-off from the propagator is clamped.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match &self.rule {
            Rule::Power(k) => k * u.powf(self.p),
            Rule::Zero => 0.0,
            Rule::Custom(f) => f(u),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.rule, Rule::Zero)
    }

    pub fn upper(&self) -> Result<f64> {
        self.k1
            .ok_or_else(|| Error::InvalidNonlinearity("upper constant K1 required".into()))
    }

    pub fn lower(&self) -> Result<f64> {
        self.k2
            .ok_or_else(|| Error::InvalidNonlinearity("lower constant K2 required".into()))
    }

    /// `A_p = (K₂(p−1))^{−1/(p−1)}`.
    pub fn a_p(&self) -> Result<f64> {
        Ok((self.lower()? * (self.p - 1.0)).powf(-1.0 / (self.p - 1.0)))
    }

    /// `1/(K₁(p−1))`.
    pub fn threshold(&self) -> Result<f64> {
        Ok(1.0 / (self.upper()? * (self.p - 1.0)))
    }

    pub fn summary(&self) -> NonlinearitySummary {
        NonlinearitySummary {
            p: self.p,
            k1: self.k1,
            k2: self.k2,
            rule: match self.rule {
                Rule::Power(_) => "power",
                Rule::Zero => "zero",
                Rule::Custom(_) => "custom",
            },
        }
    }
}
