use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::heat::HeatSemigroup;
use crate::mild::{MildSolution, Nonlinearity};

/// Default relative slack of the monitors.
pub const MONITOR_SLACK: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorVerdict {
    Consistent,
    NecessaryConditionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    /// Time origin of `θ₀` in the underlying solution.
    pub tau: f64,
    pub times: Vec<f64>,
    /// `t^{1/(p−1)}·‖e^{−tL}θ₀‖_∞`.
    pub values: Vec<f64>,
    pub a_p: f64,
    pub max_ratio: f64,
    pub slack: f64,
    pub verdict: MonitorVerdict,
    /// First time the value reaches `A_p`, refined by bisection.
    pub crossing_time: Option<f64>,
}

impl MonitorReport {
    pub fn violated(&self) -> bool {
        self.verdict == MonitorVerdict::NecessaryConditionViolated
    }
}

fn ap_value(sg: &HeatSemigroup, theta: &[f64], t: f64, p: f64) -> f64 {
    let v = sg.apply_values(theta, t);
    t.powf(1.0 / (p - 1.0)) * v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Evaluate the necessary condition `t^{1/(p−1)}‖e^{−tL}θ₀‖_∞ ≤ A_p` for
/// global mild supersolutions at the probe times.
pub fn ap_monitor(
    sg: &HeatSemigroup,
    theta0: &GridField,
    nl: &Nonlinearity,
    times: &[f64],
) -> Result<MonitorReport> {
    ap_monitor_with(sg, theta0, nl, times, MONITOR_SLACK)
}

pub fn ap_monitor_with(
    sg: &HeatSemigroup,
    theta0: &GridField,
    nl: &Nonlinearity,
    times: &[f64],
    slack: f64,
) -> Result<MonitorReport> {
    theta0.require_nonnegative()?;
    if theta0.model().as_ref() != sg.model().as_ref() {
        return Err(Error::ShapeMismatch);
    }
    let a_p = nl.a_p()?;
    let p = nl.p;
    let mut sorted = times.to_vec();
    sorted.retain(|t| *t > 0.0 && t.is_finite());
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.is_empty() {
        return Err(Error::Validation("ap_monitor needs positive probe times".into()));
    }
    let theta = theta0.values();
    let mut values = Vec::with_capacity(sorted.len());
    sg.orbit(theta, &sorted, |_, t, u| {
        let s = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        values.push(t.powf(1.0 / (p - 1.0)) * s);
    })?;
    let max_ratio = values.iter().fold(0.0f64, |m, v| m.max(v / a_p));
    let crossing_time = values.iter().position(|v| *v >= a_p).map(|k| {
        let (mut lo, mut hi) = (if k == 0 { 0.0 } else { sorted[k - 1] }, sorted[k]);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if mid <= 0.0 || ap_value(sg, theta, mid, p) < a_p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * hi {
                break;
            }
        }
        hi
    });
    let verdict = if max_ratio > 1.0 + slack {
        MonitorVerdict::NecessaryConditionViolated
    } else {
        MonitorVerdict::Consistent
    };
    Ok(MonitorReport {
        tau: 0.0,
        times: sorted,
        values,
        a_p,
        max_ratio,
        slack,
        verdict,
        crossing_time,
    })
}

/// The A_p monitor restarted from `u(τ)`; the time-shifted solution solves
/// the same integral equation, so the bound applies on `(0, T − τ]`.
pub fn shifted_ap_monitor(
    sol: &MildSolution,
    tau: f64,
    nl: &Nonlinearity,
    times: &[f64],
) -> Result<MonitorReport> {
    let horizon = *sol.times.last().unwrap_or(&0.0);
    let tol = 1e-9 * horizon.max(1.0);
    let j = sol
        .times
        .iter()
        .position(|t| (t - tau).abs() <= tol)
        .ok_or(Error::TauNotSnapshot(tau))?;
    let mut theta = sol.snapshot(j);
    // clear round-off negatives left by the propagator
    theta.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut r = ap_monitor(sol.semigroup(), &theta, nl, times)?;
    r.tau = sol.times[j];
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassGrowth {
    /// Product bounded below and flat: `∫(s+1)^{-1}ds` diverges logarithmically.
    Logarithmic,
    /// Product grows: compact saturation.
    SuperLogarithmic,
    /// Product is neither flat nor growing within slack.
    NotFlat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassGrowthReport {
    pub p: f64,
    pub global_dimension: u32,
    pub s: Vec<f64>,
    /// `(s+1)·‖h_{s+1}^p‖₁`.
    pub products: Vec<f64>,
    pub min_product: f64,
    pub max_product: f64,
    /// `max/min − 1`.
    pub flatness: f64,
    pub slack: f64,
    pub growth: MassGrowth,
    /// Lower bound on the coefficient of `ln t` in `∫₀^t ‖h_{s+1}^p‖₁ ds`.
    pub log_divergence_rate: f64,
    /// Slope of `ln(product)` against `ln(s+1)`.
    pub log_slope: f64,
}

/// Track `(s+1)·‖h_{s+1}^p‖₁` along `s_range` at the critical exponent.
pub fn mass_growth_monitor(
    sg: &HeatSemigroup,
    p: f64,
    s_range: &[f64],
    slack: f64,
) -> Result<MassGrowthReport> {
    let g = sg.model();
    let d = g.global_dimension();
    if d > 0 && (d as f64 * (p - 1.0) / 2.0 - 1.0).abs() > 1e-9 {
        return Err(Error::NotCriticalExponent { p, dimension: d });
    }
    if !(p > 1.0) {
        return Err(Error::NotCriticalExponent { p, dimension: d });
    }
    let mut s: Vec<f64> = s_range.iter().copied().filter(|s| *s >= 0.0).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    if s.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "mass monitor needs 2 distinct times, got {}",
            s.len()
        )));
    }
    let t0 = s[0] + 1.0;
    let h0 = sg.heat_kernel(t0)?;
    let cell = g.cell_volume();
    let times: Vec<f64> = s.iter().map(|s| s + 1.0 - t0).collect();
    let mut products = Vec::with_capacity(s.len());
    sg.orbit(h0.values(), &times, |_, dt, u| {
        let lp: f64 = u.iter().map(|v| v.max(0.0).powf(p)).sum::<f64>() * cell;
        products.push((t0 + dt) * lp);
    })?;
    let min_product = products.iter().copied().fold(f64::INFINITY, f64::min);
    let max_product = products.iter().copied().fold(0.0, f64::max);
    let flatness = max_product / min_product - 1.0;
    let xs: Vec<f64> = s.iter().map(|s| (s + 1.0).ln()).collect();
    let ys: Vec<f64> = products.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let log_slope = sxy / sxx;
    let growth = if flatness <= slack {
        MassGrowth::Logarithmic
    } else if log_slope > 0.0 && products.windows(2).all(|w| w[1] >= w[0]) {
        MassGrowth::SuperLogarithmic
    } else {
        MassGrowth::NotFlat
    };
    Ok(MassGrowthReport {
        p,
        global_dimension: d,
        s,
        products,
        min_product,
        max_product,
        flatness,
        slack,
        growth,
        log_divergence_rate: min_product,
        log_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, GroupKind, GroupSpec};
    use crate::mild::{picard_solve_with, PicardOptions};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn torus() -> HeatSemigroup {
        let g = Arc::new(make_group(&GroupSpec::cube(GroupKind::Torus, 1, 2.0 * PI, 16)).unwrap());
        HeatSemigroup::for_model(&g).unwrap()
    }

    #[test]
    fn constant_data_crosses_at_ode_time() {
        let sg = torus();
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        let c = 2.0;
        let theta = GridField::constant(sg.model(), c);
        let times: Vec<f64> = (1..=20).map(|k| 0.05 * k as f64).collect();
        let r = ap_monitor(&sg, &theta, &nl, &times).unwrap();
        assert_eq!(r.a_p, 1.0);
        for (t, v) in r.times.iter().zip(&r.values) {
            assert!((v - t * c).abs() < 1e-12);
        }
        assert!(r.violated());
        assert!((r.crossing_time.unwrap() - 0.5).abs() < 1e-8);
        let short = ap_monitor(&sg, &theta, &nl, &[0.1, 0.3, 0.5]).unwrap();
        assert!(!short.violated());
    }

    #[test]
    fn shifted_monitor_sees_remaining_horizon() {
        let sg = torus();
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        let u0 = GridField::constant(sg.model(), 1.0);
        let opts = PicardOptions {
            horizon: 0.5,
            steps: 200,
            tol: 1e-10,
            k_max: 200,
        };
        let sol = picard_solve_with(&sg, &u0, &nl, &opts).unwrap();
        let times: Vec<f64> = (1..=40).map(|k| 0.025 * k as f64).collect();
        let r = shifted_ap_monitor(&sol, 0.5, &nl, &times).unwrap();
        let remaining = r.crossing_time.unwrap();
        assert!((remaining / 0.5 - 1.0).abs() < 0.02, "{remaining}");
        let r0 = shifted_ap_monitor(&sol, 0.0, &nl, &times).unwrap();
        let direct = ap_monitor(&sg, &u0, &nl, &times).unwrap();
        assert_eq!(r0.values, direct.values);
        assert!(matches!(
            shifted_ap_monitor(&sol, 0.2501, &nl, &times),
            Err(Error::TauNotSnapshot(_))
        ));
    }

    #[test]
    fn torus_mass_growth_is_superlogarithmic() {
        let sg = torus();
        let s: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let r = mass_growth_monitor(&sg, 2.0, &s, 0.05).unwrap();
        assert_eq!(r.growth, MassGrowth::SuperLogarithmic);
        assert!((r.log_slope - 1.0).abs() < 0.05);
    }
}
