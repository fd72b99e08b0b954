use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::heat::HeatSemigroup;
use crate::mild::{Nonlinearity, Rule};
use crate::par;
use crate::report::g12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Controls {
    pub dt0: f64,
    pub dt_min: f64,
    /// Blow-up threshold; `1e8·sup u₀` when unset.
    pub m_max: Option<f64>,
    pub t_max: f64,
    /// Largest accepted relative sup-norm growth per step.
    pub safety: f64,
    /// Cap for step growth after easy steps; `dt0` when unset.
    pub dt_max: Option<f64>,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            dt0: 0.01,
            dt_min: 1e-12,
            m_max: None,
            t_max: 100.0,
            safety: 0.1,
            dt_max: None,
        }
    }
}

impl Controls {
    fn validate(&self, sup0: f64) -> Result<(f64, f64)> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.dt0) && pos(self.dt_min) && pos(self.t_max) && pos(self.safety)) {
            return Err(Error::InvalidControls(
                "dt0, dt_min, t_max and safety must be positive".into(),
            ));
        }
        if self.dt_min > self.dt0 {
            return Err(Error::InvalidControls("dt_min exceeds dt0".into()));
        }
        let m_max = self.m_max.unwrap_or(1e8 * sup0);
        if !(m_max >= 1e3 * sup0) || !(m_max > 0.0) {
            return Err(Error::InvalidControls(format!(
                "M_max = {m_max} must be at least 1e3·sup(u0) = {}",
                1e3 * sup0
            )));
        }
        let dt_max = self.dt_max.unwrap_or(self.dt0);
        if !(dt_max >= self.dt0) {
            return Err(Error::InvalidControls("dt_max is below dt0".into()));
        }
        Ok((m_max, dt_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Blowup,
    GlobalSoFar,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ThresholdHit,
    DtCollapse,
    HorizonReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub sup_norm: f64,
    pub mass: f64,
    pub dt: f64,
    /// `t^{1/(p−1)}·‖e^{−tL}u₀‖_∞`.
    pub ap_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupFit {
    pub t_star: f64,
    /// Relative RMS misfit of `sup^{1−p}` on the fit window.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    pub classification: Classification,
    pub termination: Termination,
    pub t_end: f64,
    /// Fitted blow-up time, or the last time reached when the fit is
    /// degenerate; `None` unless classified as blow-up.
    pub t_star: Option<f64>,
    pub fit: Option<BlowupFit>,
    pub fit_error: Option<String>,
    pub p: f64,
    pub m_max: f64,
    pub a_p: Option<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub trace: Vec<TraceRow>,
}

impl BlowupReport {
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,sup_norm,mass,dt,ap_value")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{}",
                g12(r.t),
                g12(r.sup_norm),
                g12(r.mass),
                g12(r.dt),
                g12(r.ap_value)
            )?;
        }
        Ok(())
    }
}

/// Exact flow of `u' = f(u)` over `tau` at every lattice point. Returns
/// `false` if some point leaves `[0, ∞)` within the step.
fn ode_flow(nl: &Nonlinearity, u: &mut [f64], tau: f64) -> bool {
    let p = nl.p;
    match &nl.rule {
        Rule::Zero => true,
        Rule::Power(k) => {
            let c = k * (p - 1.0) * tau;
            let worst = par::min_by(u.len(), |i| 1.0 - c * u[i].max(0.0).powf(p - 1.0));
            if !(worst > 0.0) {
                return false;
            }
            par::update(u, |_, v| {
                let v = v.max(0.0);
                v * (1.0 - c * v.powf(p - 1.0)).powf(-1.0 / (p - 1.0))
            });
            true
        }
        Rule::Custom(_) => {
            // classical RK4 substeps
            const SUB: usize = 16;
            let h = tau / SUB as f64;
            par::update(u, |_, v0| {
                let mut v = v0.max(0.0);
                for _ in 0..SUB {
                    let k1 = nl.eval(v);
                    let k2 = nl.eval(v + 0.5 * h * k1);
                    let k3 = nl.eval(v + 0.5 * h * k2);
                    let k4 = nl.eval(v + h * k3);
                    v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                v
            });
            u.iter().all(|v| v.is_finite())
        }
    }
}

fn sup(u: &[f64]) -> f64 {
    par::max_by(u.len(), |i| u[i].abs()).max(0.0)
}

/// Strang splitting `ODE(Δt/2) ∘ e^{−ΔtL} ∘ ODE(Δt/2)` with step control on
/// the relative sup-norm growth.
pub fn integrate_nonlinear(
    sg: &HeatSemigroup,
    u0: &GridField,
    nl: &Nonlinearity,
    controls: &Controls,
) -> Result<BlowupReport> {
    u0.require_nonnegative()?;
    if u0.model().as_ref() != sg.model().as_ref() {
        return Err(Error::ShapeMismatch);
    }
    let sup0 = u0.sup_norm();
    let (m_max, dt_max) = controls.validate(sup0)?;
    let p = nl.p;
    let cell = sg.model().cell_volume();
    let mass = |u: &[f64]| par::sum_by(u.len(), |i| u[i].abs()) * cell;
    let a_p = nl.a_p().ok();

    let mut u = u0.values().to_vec();
    let mut lin = u.clone();
    let mut t = 0.0;
    let mut dt = controls.dt0;
    let mut trace = vec![TraceRow {
        t,
        sup_norm: sup0,
        mass: mass(&u),
        dt: 0.0,
        ap_value: 0.0,
    }];
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let eps_t = 1e-12 * controls.t_max;

    let (classification, termination) = loop {
        if t >= controls.t_max - eps_t {
            break (Classification::GlobalSoFar, Termination::HorizonReached);
        }
        if dt < controls.dt_min {
            let grew = trace.last().map_or(0.0, |r| r.sup_norm) >= 10.0 * sup0.max(f64::MIN_POSITIVE);
            let class = if grew && sup0 > 0.0 {
                Classification::Blowup
            } else {
                Classification::Inconclusive
            };
            break (class, Termination::DtCollapse);
        }
        let h = dt.min(controls.t_max - t);
        let s_old = trace.last().expect("trace").sup_norm;
        let mut v = u.clone();
        let ok = ode_flow(nl, &mut v, 0.5 * h) && {
            v = sg.apply_values(&v, h);
            ode_flow(nl, &mut v, 0.5 * h)
        };
        if !ok {
            rejected += 1;
            dt *= 0.5;
            continue;
        }
        let s_new = sup(&v);
        let growth = if s_old > 0.0 { (s_new - s_old) / s_old } else { 0.0 };
        if !(growth <= controls.safety) {
            rejected += 1;
            dt *= 0.5;
            continue;
        }
        accepted += 1;
        t += h;
        u = v;
        lin = sg.apply_values(&lin, h);
        trace.push(TraceRow {
            t,
            sup_norm: s_new,
            mass: mass(&u),
            dt: h,
            ap_value: t.powf(1.0 / (p - 1.0)) * sup(&lin),
        });
        if s_new >= m_max {
            break (Classification::Blowup, Termination::ThresholdHit);
        }
        if growth < 0.25 * controls.safety {
            dt = (dt * 1.25).min(dt_max);
        }
    };

    let (t_star, fit, fit_error) = if classification == Classification::Blowup {
        match estimate_blowup_time(&trace, p) {
            Ok(f) => (Some(f.t_star), Some(f), None),
            Err(e) => (Some(t), None, Some(e.to_string())),
        }
    } else {
        (None, None, None)
    };
    Ok(BlowupReport {
        classification,
        termination,
        t_end: t,
        t_star,
        fit,
        fit_error,
        p,
        m_max,
        a_p,
        accepted_steps: accepted,
        rejected_steps: rejected,
        trace,
    })
}

/// Fit `sup^{1−p} = a − b·t` on the terminal decade (`sup ≥ sup_final/10`)
/// and return `T* = a/b`.
pub fn estimate_blowup_time(trace: &[TraceRow], p: f64) -> Result<BlowupFit> {
    let last = trace
        .last()
        .ok_or_else(|| Error::FitDegenerate("empty trace".into()))?;
    let floor = last.sup_norm / 10.0;
    let start = trace
        .iter()
        .rposition(|r| r.sup_norm < floor)
        .map(|i| i + 1)
        .ok_or_else(|| Error::FitDegenerate("trace never grew by a decade".into()))?;
    let window = &trace[start..];
    if window.len() < 10 {
        return Err(Error::FitDegenerate(format!(
            "{} points in the terminal decade, need 10",
            window.len()
        )));
    }
    if window.windows(2).any(|w| !(w[1].sup_norm > w[0].sup_norm && w[1].t > w[0].t)) {
        return Err(Error::FitDegenerate("terminal trace is not increasing".into()));
    }
    let xs: Vec<f64> = window.iter().map(|r| r.t).collect();
    let ys: Vec<f64> = window.iter().map(|r| r.sup_norm.powf(1.0 - p)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::FitDegenerate("sup^{1-p} is not decreasing".into()));
    }
    let a = my - slope * mx;
    let t_star = a / -slope;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (a + slope * x)).powi(2))
        .sum();
    let ss: f64 = ys.iter().map(|y| y * y).sum();
    Ok(BlowupFit {
        t_star,
        residual: (rss / ss).sqrt(),
        points: window.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, GroupKind, GroupSpec};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn torus() -> HeatSemigroup {
        let g = Arc::new(make_group(&GroupSpec::cube(GroupKind::Torus, 1, 2.0 * PI, 16)).unwrap());
        HeatSemigroup::for_model(&g).unwrap()
    }

    #[test]
    fn constant_data_blows_up_at_ode_time() {
        let sg = torus();
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        for (c, t_star) in [(1.0, 1.0), (2.0, 0.5)] {
            let u0 = GridField::constant(sg.model(), c);
            let r = integrate_nonlinear(&sg, &u0, &nl, &Controls::default()).unwrap();
            assert_eq!(r.classification, Classification::Blowup);
            assert_eq!(r.termination, Termination::ThresholdHit);
            let est = r.t_star.unwrap();
            assert!((est / t_star - 1.0).abs() < 0.02, "{est}");
            assert!(r.trace.windows(2).all(|w| w[1].t > w[0].t));
        }
    }

    #[test]
    fn constant_data_tracks_ode_solution() {
        let sg = torus();
        let nl = Nonlinearity::power(3.0, 1.0).unwrap();
        let u0 = GridField::constant(sg.model(), 1.0);
        let r = integrate_nonlinear(&sg, &u0, &nl, &Controls::default()).unwrap();
        for row in r.trace.iter().filter(|r| r.t <= 0.9 * 0.5) {
            let exact = (1.0 - 2.0 * row.t).powf(-0.5);
            assert!((row.sup_norm / exact - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn zero_nonlinearity_is_global() {
        let sg = torus();
        let nl = Nonlinearity::zero(2.0, 1.0).unwrap();
        let u0 = GridField::from_fn(sg.model(), |c| 1.0 + c[0].cos());
        let controls = Controls {
            t_max: 2.0,
            dt0: 0.1,
            ..Default::default()
        };
        let r = integrate_nonlinear(&sg, &u0, &nl, &controls).unwrap();
        assert_eq!(r.classification, Classification::GlobalSoFar);
        assert_eq!(r.termination, Termination::HorizonReached);
        assert!(r.trace.windows(2).all(|w| w[1].sup_norm <= w[0].sup_norm + 1e-12));
        let lin = sg.apply(&u0, 2.0).unwrap();
        assert!((r.trace.last().unwrap().sup_norm - lin.sup_norm()).abs() < 1e-9);
    }

    #[test]
    fn synthetic_trace_fit() {
        // sup grows by 5% per sample, as under the default step control
        let trace: Vec<TraceRow> = (0..400)
            .map(|k| {
                let sup = 1.05f64.powi(k);
                TraceRow {
                    t: 1.0 - 1.0 / sup,
                    sup_norm: sup,
                    mass: 0.0,
                    dt: 0.0,
                    ap_value: 0.0,
                }
            })
            .collect();
        let f = estimate_blowup_time(&trace, 2.0).unwrap();
        assert!((f.t_star - 1.0).abs() < 1e-3);
        let flat = &trace[..20];
        assert!(matches!(estimate_blowup_time(flat, 2.0), Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn controls_validated() {
        let sg = torus();
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        let u0 = GridField::constant(sg.model(), 1.0);
        let bad = Controls {
            m_max: Some(10.0),
            ..Default::default()
        };
        assert!(matches!(integrate_nonlinear(&sg, &u0, &nl, &bad), Err(Error::InvalidControls(_))));
        let mut neg = u0.clone();
        neg.values_mut()[0] = -1.0;
        assert!(matches!(
            integrate_nonlinear(&sg, &neg, &nl, &Controls::default()),
            Err(Error::NegativeData { .. })
        ));
    }
}
