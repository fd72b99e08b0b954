use serde::{Deserialize, Serialize};

use super::Nonlinearity;
use crate::error::{Error, Result};
use crate::field::GridField;
use crate::group::{GroupModel, VolumeProfile};
use crate::heat::HeatSemigroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExistenceOptions {
    /// Numeric quadrature runs on `[0, s_cut]`; the rest is the tail bound.
    pub s_cut: f64,
    /// Geometric nodes on `(0, s_cut]`; `s = 0` is prepended.
    pub grid_points: usize,
    /// First positive node as a fraction of `s_cut`.
    pub first_node: f64,
    /// Multiplier on the analytic tail bound.
    pub tail_safety: f64,
}

impl Default for ExistenceOptions {
    fn default() -> Self {
        Self {
            s_cut: 100.0,
            grid_points: 400,
            first_node: 1e-7,
            tail_safety: 2.0,
        }
    }
}

impl ExistenceOptions {
    pub fn with_s_cut(s_cut: f64) -> Self {
        Self {
            s_cut,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.s_cut >= 1.0 && self.s_cut.is_finite()) {
            return Err(Error::InvalidControls(format!(
                "S_cut = {} must be finite and at least 1 so the tail uses the large-time profile",
                self.s_cut
            )));
        }
        if self.grid_points < 2 || !(self.first_node > 0.0 && self.first_node < 1.0) {
            return Err(Error::InvalidControls("quadrature grid is degenerate".into()));
        }
        if !(self.tail_safety >= 1.0) {
            return Err(Error::InvalidControls("tail safety factor must be at least 1".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.grid_points;
        let mut s = Vec::with_capacity(n + 1);
        s.push(0.0);
        let ratio = 1.0 / self.first_node;
        for k in 0..n {
            s.push(self.s_cut * self.first_node * ratio.powf(k as f64 / (n - 1) as f64));
        }
        *s.last_mut().expect("nonempty grid") = self.s_cut;
        s
    }
}

/// `‖e^{−sL}u₀‖_∞` on the quadrature nodes, plus `‖u₀‖₁`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupOrbit {
    pub s: Vec<f64>,
    pub sup: Vec<f64>,
    pub mass: f64,
}

impl SupOrbit {
    pub fn compute(sg: &HeatSemigroup, u0: &GridField, opts: &ExistenceOptions) -> Result<Self> {
        opts.validate()?;
        u0.require_nonnegative()?;
        let s = opts.nodes();
        let mut sup = vec![0.0; s.len()];
        sg.orbit(u0.values(), &s, |k, _, v| {
            sup[k] = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        })?;
        Ok(Self {
            s,
            sup,
            mass: u0.mass(),
        })
    }

    /// Orbit of `ε·u₀`.
    pub fn scaled(&self, eps: f64) -> Self {
        Self {
            s: self.s.clone(),
            sup: self.sup.iter().map(|v| eps * v).collect(),
            mass: eps * self.mass,
        }
    }

    /// Cumulative trapezoid of `sup^{p−1}` at every node.
    pub fn partial(&self, p: f64) -> Vec<(f64, f64)> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.s.len());
        out.push((self.s[0], 0.0));
        for k in 1..self.s.len() {
            let a = self.sup[k - 1].powf(p - 1.0);
            let b = self.sup[k].powf(p - 1.0);
            acc += 0.5 * (self.s[k] - self.s[k - 1]) * (a + b);
            out.push((self.s[k], acc));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceCertificate {
    pub p: f64,
    pub k1: f64,
    pub global_dimension: u32,
    pub fujita_exponent: f64,
    pub s_cut: f64,
    /// Quadrature of `‖e^{−sL}u₀‖_∞^{p−1}` over `[0, s_cut]`.
    pub numeric_part: f64,
    /// Upper bound for the integral over `[s_cut, ∞)`; infinite when it
    /// diverges.
    pub tail_bound: f64,
    pub integral: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    /// `(1 − K₁(p−1)I)^{−1/(p−1)}` when satisfied.
    pub constant_c: Option<f64>,
    /// `C` in `‖h_t‖_∞ ≤ C t^{−D/2}` used by the tail.
    pub tail_kernel_constant: Option<f64>,
    #[serde(skip)]
    pub partial: Vec<(f64, f64)>,
}

impl ExistenceCertificate {
    pub fn is_satisfied(&self) -> bool {
        self.verdict == Verdict::Satisfied
    }

    /// Build from a precomputed orbit; `profile` is needed only when the
    /// tail converges.
    pub fn from_orbit(
        g: &GroupModel,
        orbit: &SupOrbit,
        nl: &Nonlinearity,
        profile: Option<&VolumeProfile>,
        opts: &ExistenceOptions,
    ) -> Result<Self> {
        let p = nl.p;
        let k1 = nl.upper()?;
        let d = g.global_dimension();
        let threshold = nl.threshold()?;
        let partial = orbit.partial(p);
        let numeric_part = partial.last().map_or(0.0, |x| x.1);
        let base = Self {
            p,
            k1,
            global_dimension: d,
            fujita_exponent: g.fujita_exponent(),
            s_cut: opts.s_cut,
            numeric_part,
            tail_bound: 0.0,
            integral: numeric_part,
            threshold,
            verdict: Verdict::Satisfied,
            constant_c: Some(1.0),
            tail_kernel_constant: None,
            partial,
        };
        if orbit.sup.iter().all(|&v| v == 0.0) {
            return Ok(base);
        }
        let q = d as f64 * (p - 1.0) / 2.0;
        if q <= 1.0 {
            return Ok(Self {
                tail_bound: f64::INFINITY,
                integral: f64::INFINITY,
                verdict: Verdict::Divergent,
                constant_c: None,
                ..base
            });
        }
        let profile = profile.ok_or(Error::ProfileUnfitted)?;
        let c_fit = profile.upper_constant(d as f64, 1.0);
        let tail = opts.tail_safety
            * (c_fit * orbit.mass).powf(p - 1.0)
            * opts.s_cut.powf(1.0 - q)
            / (q - 1.0);
        let integral = numeric_part + tail;
        let bracket = 1.0 - k1 * (p - 1.0) * integral;
        let (verdict, constant_c) = if integral < threshold && bracket > 0.0 {
            (Verdict::Satisfied, Some(bracket.powf(-1.0 / (p - 1.0))))
        } else {
            (Verdict::Violated, None)
        };
        Ok(Self {
            tail_bound: tail,
            integral,
            verdict,
            constant_c,
            tail_kernel_constant: Some(c_fit),
            ..base
        })
    }
}

/// Evaluate `I(u₀, p) = ∫₀^∞ ‖e^{−sL}u₀‖_∞^{p−1} ds` against `1/(K₁(p−1))`
/// with the model's default scheme.
pub fn existence_condition(
    g: &std::sync::Arc<GroupModel>,
    u0: &GridField,
    nl: &Nonlinearity,
    s_cut: f64,
    profile: Option<&VolumeProfile>,
) -> Result<ExistenceCertificate> {
    let sg = HeatSemigroup::for_model(g)?;
    existence_condition_with(&sg, u0, nl, profile, &ExistenceOptions::with_s_cut(s_cut))
}

pub fn existence_condition_with(
    sg: &HeatSemigroup,
    u0: &GridField,
    nl: &Nonlinearity,
    profile: Option<&VolumeProfile>,
    opts: &ExistenceOptions,
) -> Result<ExistenceCertificate> {
    let orbit = SupOrbit::compute(sg, u0, opts)?;
    ExistenceCertificate::from_orbit(sg.model(), &orbit, nl, profile, opts)
}

/// `ω(t) = (1 − K₁(p−1)·partial(t))^{−1/(p−1)}` at each node of `partial`.
pub fn omega_curve(cert: &ExistenceCertificate, partial: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let (p, k1) = (cert.p, cert.k1);
    partial
        .iter()
        .map(|&(t, i)| {
            let bracket = 1.0 - k1 * (p - 1.0) * i;
            if bracket <= 0.0 {
                Err(Error::BarrierBlowup { t })
            } else {
                Ok((t, bracket.powf(-1.0 / (p - 1.0))))
            }
        })
        .collect()
}

/// `∫₀^t ‖e^{−sL}u₀‖_∞^{p−1} ds` by the trapezoid rule on `times`
/// (sorted, starting at 0), each interval split into `refine` pieces.
pub fn partial_integrals(
    sg: &HeatSemigroup,
    u0: &GridField,
    p: f64,
    times: &[f64],
    refine: usize,
) -> Result<Vec<(f64, f64)>> {
    let refine = refine.max(1);
    let mut nodes = vec![times.first().copied().unwrap_or(0.0)];
    for w in times.windows(2) {
        for k in 1..=refine {
            nodes.push(w[0] + (w[1] - w[0]) * k as f64 / refine as f64);
        }
    }
    let mut sup = vec![0.0; nodes.len()];
    sg.orbit(u0.values(), &nodes, |k, _, v| {
        sup[k] = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    })?;
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    out.push((nodes[0], 0.0));
    for k in 1..nodes.len() {
        acc += 0.5 * (nodes[k] - nodes[k - 1]) * (sup[k - 1].powf(p - 1.0) + sup[k].powf(p - 1.0));
        if k % refine == 0 {
            out.push((nodes[k], acc));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSearch {
    /// Largest `ε` found with a satisfied certificate for `ε·base`.
    pub threshold: f64,
    pub iterations: usize,
    pub certificate: ExistenceCertificate,
}

/// Bisect on `ε` until the verdict for `ε·base` flips from satisfied.
pub fn epsilon_threshold(
    sg: &HeatSemigroup,
    base: &GridField,
    nl: &Nonlinearity,
    profile: Option<&VolumeProfile>,
    opts: &ExistenceOptions,
    rel_tol: f64,
) -> Result<EpsilonSearch> {
    let orbit = SupOrbit::compute(sg, base, opts)?;
    let g = sg.model();
    let cert = |eps: f64| ExistenceCertificate::from_orbit(g, &orbit.scaled(eps), nl, profile, opts);
    let mut iterations = 0;
    let (mut lo, mut hi) = (0.0, 1.0);
    if cert(hi)?.verdict == Verdict::Divergent {
        return Ok(EpsilonSearch {
            threshold: 0.0,
            iterations,
            certificate: cert(0.0)?,
        });
    }
    while cert(hi)?.is_satisfied() {
        iterations += 1;
        lo = hi;
        hi *= 2.0;
        if iterations > 2000 {
            return Err(Error::InvalidControls("epsilon search did not bracket".into()));
        }
    }
    while hi - lo > rel_tol * hi {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if cert(mid)?.is_satisfied() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonSearch {
        threshold: lo,
        iterations,
        certificate: cert(lo)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, GroupKind, GroupSpec};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line() -> Arc<GroupModel> {
        Arc::new(make_group(&GroupSpec::new(GroupKind::Euclidean, vec![512.0], vec![1024])).unwrap())
    }

    #[test]
    fn zero_data_is_trivially_satisfied() {
        let g = line();
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        let c = existence_condition(&g, &GridField::zeros(&g), &nl, 100.0, None).unwrap();
        assert_eq!(c.verdict, Verdict::Satisfied);
        assert_eq!(c.integral, 0.0);
        assert_eq!(c.constant_c, Some(1.0));
    }

    #[test]
    fn subcritical_exponent_diverges() {
        let g = line();
        let u0 = GridField::from_fn(&g, |c| (-c[0] * c[0]).exp());
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        let c = existence_condition(&g, &u0, &nl, 100.0, None).unwrap();
        assert_eq!(c.verdict, Verdict::Divergent);
        let crit = Nonlinearity::power(3.0, 1.0).unwrap();
        assert_eq!(existence_condition(&g, &u0, &crit, 100.0, None).unwrap().verdict, Verdict::Divergent);
    }

    #[test]
    fn supercritical_needs_profile() {
        let g = line();
        let u0 = GridField::from_fn(&g, |c| (-c[0] * c[0]).exp());
        let nl = Nonlinearity::power(4.0, 1.0).unwrap();
        assert!(matches!(
            existence_condition(&g, &u0, &nl, 100.0, None),
            Err(Error::ProfileUnfitted)
        ));
    }

    #[test]
    fn small_gaussian_data_matches_closed_form() {
        // I(ε h_γ) = ε³ (4π)^{−3/2} · 2γ^{−1/2} for p = 4 in one dimension
        let g = line();
        let sg = HeatSemigroup::for_model(&g).unwrap();
        let (eps, gamma) = (0.5, 1.0);
        let u0 = sg.heat_kernel(gamma).unwrap().scaled(eps);
        let nl = Nonlinearity::power(4.0, 1.0).unwrap();
        let prof = VolumeProfile::euclidean(1);
        let opts = ExistenceOptions::with_s_cut(1000.0);
        let c = existence_condition_with(&sg, &u0, &nl, Some(&prof), &opts).unwrap();
        let exact_numeric = eps.powi(3) * (4.0 * PI).powf(-1.5) * 2.0 * (gamma.powf(-0.5) - (1000.0 + gamma).powf(-0.5));
        assert!((c.numeric_part / exact_numeric - 1.0).abs() < 1e-3, "{} vs {exact_numeric}", c.numeric_part);
        let exact = eps.powi(3) * (4.0 * PI).powf(-1.5) * 2.0 / gamma.sqrt();
        assert!(c.integral >= exact);
        assert!(c.integral <= 1.1 * exact);
        assert_eq!(c.verdict, Verdict::Satisfied);
        let cc = c.constant_c.unwrap();
        assert!(cc > 1.0 && cc < 1.01);
    }

    #[test]
    fn omega_on_constant_torus_data() {
        let g = Arc::new(make_group(&GroupSpec::cube(GroupKind::Torus, 1, 2.0 * PI, 16)).unwrap());
        let sg = HeatSemigroup::for_model(&g).unwrap();
        let c0 = 0.8;
        let u0 = GridField::constant(&g, c0);
        let nl = Nonlinearity::power(3.0, 1.0).unwrap();
        let cert = existence_condition(&g, &u0, &nl, 10.0, None).unwrap();
        assert_eq!(cert.verdict, Verdict::Divergent);
        let times: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
        let partial = partial_integrals(&sg, &u0, 3.0, &times, 1).unwrap();
        let om = omega_curve(&cert, &partial).unwrap();
        assert_eq!(om[0].1, 1.0);
        for &(t, w) in &om {
            let exact = (1.0 - 2.0 * c0 * c0 * t).powf(-0.5);
            assert!((w - exact).abs() < 1e-12, "{t}: {w} vs {exact}");
        }
        assert!(om.windows(2).all(|w| w[1].1 >= w[0].1));
        let long: Vec<f64> = vec![0.0, 1.0];
        let p2 = partial_integrals(&sg, &u0, 3.0, &long, 1).unwrap();
        assert!(matches!(omega_curve(&cert, &p2), Err(Error::BarrierBlowup { .. })));
    }

    #[test]
    fn epsilon_bisection_finds_closed_form_threshold() {
        let g = line();
        let sg = HeatSemigroup::for_model(&g).unwrap();
        let base = sg.heat_kernel(1.0).unwrap();
        let nl = Nonlinearity::power(4.0, 1.0).unwrap();
        let prof = VolumeProfile::euclidean(1);
        let opts = ExistenceOptions::with_s_cut(1000.0);
        let s = epsilon_threshold(&sg, &base, &nl, Some(&prof), &opts, 1e-6).unwrap();
        // ε³ · I(h₁) = 1/3
        let i1 = s.certificate.integral / s.threshold.powi(3);
        let expect = (1.0 / (3.0 * i1)).cbrt();
        assert!((s.threshold / expect - 1.0).abs() < 1e-5);
        assert!(s.certificate.is_satisfied());
    }
}
