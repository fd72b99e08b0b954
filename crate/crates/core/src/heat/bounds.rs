//! Two-sided Gaussian envelope fit for the simulated heat kernel.

use std::sync::Arc;

use serde::Serialize;

use super::HeatSemigroup;
use crate::error::{Error, Result};
use crate::group::GroupModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    /// `C_low`, `c_low` in `C_low V(√t)^{-1} e^{-c_low ρ²/t} ≤ h_t`.
    pub lower_prefactor: f64,
    pub lower_rate: f64,
    /// `C_up`, `c_up` in `h_t ≤ C_up V(√t)^{-1} e^{-c_up ρ²/t}`.
    pub upper_prefactor: f64,
    pub upper_rate: f64,
    pub violation_ratio: f64,
    pub slack: f64,
    pub passed: bool,
    pub fit_points: usize,
    pub validation_points: usize,
}

/// Sample of `y = log(h_t(x)·V(√t))` against `s = ρ(x)²/t`.
#[derive(Clone, Copy)]
struct Probe {
    s: f64,
    y: f64,
}

const RATE_MAX: f64 = 64.0;
/// Rates this close are indistinguishable after a ternary search on flat data.
const RATE_TOL: f64 = 1e-6;

/// Minimize the convex gap `g(c)` over `c ∈ [0, RATE_MAX]`.
fn ternary(g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0, RATE_MAX);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) <= g(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

/// Tightest upper envelope `y ≤ log C − c s`, minimizing the mean gap.
fn fit_upper(p: &[Probe]) -> (f64, f64) {
    let n = p.len() as f64;
    let ms = p.iter().map(|q| q.s).sum::<f64>() / n;
    let my = p.iter().map(|q| q.y).sum::<f64>() / n;
    let log_c = |c: f64| p.iter().map(|q| q.y + c * q.s).fold(f64::NEG_INFINITY, f64::max);
    let c = ternary(|c| log_c(c) - c * ms - my);
    (log_c(c).exp(), c)
}

/// Tightest lower envelope `y ≥ log C − c s`.
fn fit_lower(p: &[Probe]) -> (f64, f64) {
    let n = p.len() as f64;
    let ms = p.iter().map(|q| q.s).sum::<f64>() / n;
    let my = p.iter().map(|q| q.y).sum::<f64>() / n;
    let log_c = |c: f64| p.iter().map(|q| q.y + c * q.s).fold(f64::INFINITY, f64::min);
    let c = ternary(|c| my + c * ms - log_c(c));
    (log_c(c).exp(), c)
}

/// Fit `(C_low, c_low, C_up, c_up)` on the lattice shells `ρ ≈ r` for each
/// probe radius and time, then measure the worst violation over every
/// lattice point with `ρ ≤ max r`.
pub fn verify_kernel_bounds(
    g: &Arc<GroupModel>,
    times: &[f64],
    radii: &[f64],
    slack: f64,
) -> Result<BoundReport> {
    verify_kernel_bounds_with(&HeatSemigroup::for_model(g)?, times, radii, slack)
}

pub fn verify_kernel_bounds_with(
    sg: &HeatSemigroup,
    times: &[f64],
    radii: &[f64],
    slack: f64,
) -> Result<BoundReport> {
    let g = sg.model();
    if times.is_empty() || radii.is_empty() {
        return Err(Error::FitFailure("need at least one probe time and radius".into()));
    }
    if !(slack >= 1.0) {
        return Err(Error::FitFailure(format!("slack {slack} must be at least 1")));
    }
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    let limit = g.max_ball_radius();
    if r_max > limit {
        return Err(Error::BallExceedsDomain { radius: r_max, limit });
    }
    let half_h = 0.5 * g.axes.iter().map(|a| a.spacing).fold(f64::INFINITY, f64::min);
    let rho: Vec<f64> = (0..g.len()).map(|i| g.quasi_distance_flat(i)).collect();
    let inside: Vec<usize> = (0..g.len()).filter(|&i| rho[i] <= r_max).collect();
    let on_shell: Vec<bool> = inside
        .iter()
        .map(|&i| radii.iter().any(|&r| (rho[i] - r).abs() <= half_h))
        .collect();

    let mut ts = times.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut fit = Vec::new();
    let mut all = Vec::new();
    let mut h: Option<crate::field::GridField> = None;
    for &t in &ts {
        let next = match h.take() {
            Some(prev) if sg.max_step().is_finite() => {
                let t0 = prev.time.unwrap_or(0.0);
                sg.apply(&prev, t - t0)?
            }
            _ => sg.heat_kernel(t)?,
        };
        let v = g.model_ball_volume(t.sqrt());
        for (k, &i) in inside.iter().enumerate() {
            let val = next.values()[i];
            if !(val > 0.0) {
                return Err(Error::FitFailure(format!(
                    "kernel value {val:e} at t = {t}, ρ = {} is not positive",
                    rho[i]
                )));
            }
            let p = Probe {
                s: rho[i] * rho[i] / t,
                y: (val * v).ln(),
            };
            if on_shell[k] {
                fit.push(p);
            }
            all.push(p);
        }
        h = Some(next);
    }
    if fit.len() < 2 {
        return Err(Error::FitFailure("no lattice points on the probe shells".into()));
    }
    let (c_up_pref, c_up) = fit_upper(&fit);
    let (c_low_pref, c_low) = fit_lower(&fit);
    let mut ratio: f64 = 0.0;
    for p in &all {
        let upper = c_up_pref.ln() - c_up * p.s;
        let lower = c_low_pref.ln() - c_low * p.s;
        ratio = ratio.max((p.y - upper).exp()).max((lower - p.y).exp());
    }
    let finite = [c_up_pref, c_up, c_low_pref, c_low]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
        && c_up_pref > 0.0
        && c_low_pref > 0.0;
    if !finite {
        return Err(Error::FitFailure("envelope constants are not finite and positive".into()));
    }
    Ok(BoundReport {
        times: ts,
        radii: radii.to_vec(),
        lower_prefactor: c_low_pref,
        lower_rate: c_low,
        upper_prefactor: c_up_pref,
        upper_rate: c_up,
        violation_ratio: ratio,
        slack,
        passed: ratio <= slack && c_up <= c_low * (1.0 + 1e-9) + RATE_TOL,
        fit_points: fit.len(),
        validation_points: all.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, GroupKind, GroupSpec};
    use std::f64::consts::PI;

    #[test]
    fn gaussian_constants_recovered() {
        let g = Arc::new(make_group(&GroupSpec::new(GroupKind::Euclidean, vec![512.0], vec![1024])).unwrap());
        let r = verify_kernel_bounds(&g, &[1.0, 2.0, 4.0], &[0.0, 1.0, 2.0, 4.0, 6.0], 1.05).unwrap();
        let exact = PI.powf(-0.5);
        assert!((r.upper_rate - 0.25).abs() < 0.0125, "{r:?}");
        assert!((r.lower_rate - 0.25).abs() < 0.0125, "{r:?}");
        assert!((r.upper_prefactor / exact - 1.0).abs() < 0.05);
        assert!((r.lower_prefactor / exact - 1.0).abs() < 0.05);
        assert!(r.passed);
    }

    #[test]
    fn torus_large_time_is_flat() {
        let g = Arc::new(make_group(&GroupSpec::cube(GroupKind::Torus, 1, 2.0 * PI, 64)).unwrap());
        let r = verify_kernel_bounds(&g, &[20.0, 40.0], &[0.0, 1.0, 3.0], 1.01).unwrap();
        assert!(r.passed, "{r:?}");
        assert!((r.upper_prefactor - 1.0).abs() < 1e-3);
    }
}
