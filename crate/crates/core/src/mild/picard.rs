use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::{ExistenceCertificate, Nonlinearity, NonlinearitySummary};
use crate::error::{Error, Result};
use crate::field::GridField;
use crate::group::{GroupKind, GroupModel};
use crate::heat::{HeatSemigroup, Scheme};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardOptions {
    pub horizon: f64,
    pub steps: usize,
    pub tol: f64,
    pub k_max: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            steps: 1000,
            tol: 1e-8,
            k_max: 200,
        }
    }
}

impl PicardOptions {
    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || self.steps == 0 {
            return Err(Error::InvalidControls("horizon and step count must be positive".into()));
        }
        if !(self.tol > 0.0) || self.k_max == 0 {
            return Err(Error::InvalidControls("tol and k_max must be positive".into()));
        }
        Ok(())
    }
}

/// Converged Picard solution on the uniform grid `tⱼ = jT/N`.
#[derive(Debug, Clone)]
pub struct MildSolution {
    semigroup: HeatSemigroup,
    nonlinearity: Nonlinearity,
    pub times: Vec<f64>,
    /// `u(tⱼ)`; the iterate `v_k` whose image `𝔉v_k` differs by `residual`.
    pub snapshots: Vec<Vec<f64>>,
    /// `e^{−tⱼL}u₀`.
    pub lower: Vec<Vec<f64>>,
    /// Applications of `𝔉` performed.
    pub iterations: usize,
    /// `max_j ‖𝔉u(tⱼ) − u(tⱼ)‖_∞`.
    pub residual: f64,
    pub tol: f64,
    /// Sup-norm gap `max_j ‖v_{k+1} − v_k‖_∞` per iteration.
    pub gaps: Vec<f64>,
    /// Largest pointwise decrease `v_k − v_{k+1}` seen, clipped at 0.
    pub worst_decrease: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapshotSummary {
    pub t: f64,
    pub min: f64,
    pub max: f64,
    pub mass: f64,
    pub lower_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MildSummary {
    pub group: GroupKind,
    pub scheme: Scheme,
    pub nonlinearity: NonlinearitySummary,
    pub horizon: f64,
    pub steps: usize,
    pub iterations: usize,
    pub residual: f64,
    pub tol: f64,
    pub gaps: Vec<f64>,
    pub snapshots: Vec<SnapshotSummary>,
}

impl MildSolution {
    pub fn model(&self) -> &Arc<GroupModel> {
        self.semigroup.model()
    }

    pub fn semigroup(&self) -> &HeatSemigroup {
        &self.semigroup
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn snapshot(&self, j: usize) -> GridField {
        GridField::new(Arc::clone(self.model()), self.snapshots[j].clone())
            .expect("snapshot shape")
            .with_time(self.times[j])
    }

    pub fn summary(&self) -> MildSummary {
        let cell = self.model().cell_volume();
        let snapshots = self
            .times
            .iter()
            .zip(&self.snapshots)
            .zip(&self.lower)
            .map(|((&t, u), l)| SnapshotSummary {
                t,
                min: par::min_by(u.len(), |i| u[i]),
                max: par::max_by(u.len(), |i| u[i]),
                mass: par::sum_by(u.len(), |i| u[i].abs()) * cell,
                lower_max: par::max_by(l.len(), |i| l[i]),
            })
            .collect();
        MildSummary {
            group: self.model().kind,
            scheme: self.semigroup.scheme(),
            nonlinearity: self.nonlinearity.summary(),
            horizon: *self.times.last().expect("nonempty grid"),
            steps: self.times.len() - 1,
            iterations: self.iterations,
            residual: self.residual,
            tol: self.tol,
            gaps: self.gaps.clone(),
            snapshots,
        }
    }

    /// Dump every `stride`-th snapshot as `u_<j>.bin` plus sidecar.
    pub fn write_fields(&self, dir: &Path, stride: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for j in (0..self.times.len()).step_by(stride.max(1)) {
            self.snapshot(j).write_binary(&dir.join(format!("u_{j:06}.bin")))?;
        }
        Ok(())
    }
}

/// `(𝔉v)(tⱼ) = e^{−tⱼL}u₀ + ∫₀^{tⱼ} e^{−(tⱼ−s)L} f(v(s)) ds`, the integral
/// by the trapezoid rule on the grid. The recursion
/// `Dⱼ = P(Dⱼ₋₁ + Δ/2·gⱼ₋₁) + Δ/2·gⱼ` needs one propagator application per
/// step.
fn duhamel(
    sg: &HeatSemigroup,
    nl: &Nonlinearity,
    lower: &[Vec<f64>],
    v: &[Vec<f64>],
    dt: f64,
) -> Vec<Vec<f64>> {
    let n = lower[0].len();
    let half = 0.5 * dt;
    let mut out = Vec::with_capacity(v.len());
    out.push(lower[0].clone());
    if nl.is_zero() {
        out.extend(lower[1..].iter().cloned());
        return out;
    }
    let mut acc = vec![0.0; n];
    let mut g_prev = vec![0.0; n];
    par::fill(&mut g_prev, |i| nl.eval(v[0][i]));
    for j in 1..v.len() {
        par::update(&mut acc, |i, a| a + half * g_prev[i]);
        let d = sg.apply_values(&acc, dt);
        let vj = &v[j];
        par::fill(&mut g_prev, |i| nl.eval(vj[i]));
        acc = d;
        par::update(&mut acc, |i, a| a + half * g_prev[i]);
        let mut next = lower[j].clone();
        par::update(&mut next, |i, x| x + acc[i]);
        out.push(next);
    }
    out
}

fn lower_envelope(sg: &HeatSemigroup, u0: &GridField, dt: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut lower = Vec::with_capacity(steps + 1);
    lower.push(u0.values().to_vec());
    for j in 1..=steps {
        let next = sg.apply_values(&lower[j - 1], dt);
        lower.push(next);
    }
    lower
}

pub fn picard_solve(
    g: &Arc<GroupModel>,
    u0: &GridField,
    nl: &Nonlinearity,
    opts: &PicardOptions,
) -> Result<MildSolution> {
    picard_solve_with(&HeatSemigroup::for_model(g)?, u0, nl, opts)
}

/// Iterate `v₀ = e^{−tL}u₀`, `v_{k+1} = 𝔉v_k` until the sup-norm gap drops
/// below `tol`. Every iterate must dominate its predecessor up to
/// `1e-12·sup`; a larger decrease means the propagator is not positive.
pub fn picard_solve_with(
    sg: &HeatSemigroup,
    u0: &GridField,
    nl: &Nonlinearity,
    opts: &PicardOptions,
) -> Result<MildSolution> {
    opts.validate()?;
    u0.require_nonnegative()?;
    if u0.model().as_ref() != sg.model().as_ref() {
        return Err(Error::ShapeMismatch);
    }
    let dt = opts.horizon / opts.steps as f64;
    let times: Vec<f64> = (0..=opts.steps).map(|j| j as f64 * dt).collect();
    let lower = lower_envelope(sg, u0, dt, opts.steps);
    let mut v = lower.clone();
    let mut gaps = Vec::new();
    let mut worst_decrease: f64 = 0.0;
    for k in 1..=opts.k_max {
        let next = duhamel(sg, nl, &lower, &v, dt);
        let scale = next
            .iter()
            .map(|x| par::max_by(x.len(), |i| x[i].abs()))
            .fold(0.0, f64::max);
        let mut gap: f64 = 0.0;
        for (j, (a, b)) in v.iter().zip(&next).enumerate() {
            let inc = par::max_by(a.len(), |i| (b[i] - a[i]).abs());
            let dec = par::max_by(a.len(), |i| a[i] - b[i]);
            if !(inc.is_finite() && scale.is_finite()) {
                return Err(Error::NoConvergence {
                    iterations: k,
                    gap: f64::INFINITY,
                });
            }
            if dec > 1e-12 * scale {
                return Err(Error::NonmonotoneIterates {
                    iteration: k,
                    t: times[j],
                    drop: dec,
                });
            }
            worst_decrease = worst_decrease.max(dec);
            gap = gap.max(inc);
        }
        gaps.push(gap);
        if gap < opts.tol {
            return Ok(MildSolution {
                semigroup: sg.clone(),
                nonlinearity: nl.clone(),
                times,
                snapshots: v,
                lower,
                iterations: k,
                residual: gap,
                tol: opts.tol,
                gaps,
                worst_decrease,
            });
        }
        v = next;
    }
    Err(Error::NoConvergence {
        iterations: opts.k_max,
        gap: gaps.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// `max_j ‖𝔉u(tⱼ) − u(tⱼ)‖_∞` for the returned solution.
pub fn fixed_point_residual(sol: &MildSolution) -> f64 {
    let next = duhamel(&sol.semigroup, &sol.nonlinearity, &sol.lower, &sol.snapshots, sol.dt());
    sol.snapshots
        .iter()
        .zip(&next)
        .map(|(a, b)| par::max_by(a.len(), |i| (a[i] - b[i]).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub passed: bool,
    /// `max (e^{−tL}u₀ − u)`.
    pub lower_excess: f64,
    /// `max (u − ω̃(t)e^{−tL}u₀)`.
    pub upper_excess: f64,
    /// `max (ω̃(t) − C)·e^{−tL}u₀`; zero when the certificate has no `C`.
    pub constant_excess: f64,
    pub slack: f64,
    /// `max u/e^{−tL}u₀` over points where the denominator is positive.
    pub max_ratio: f64,
    pub omega_max: f64,
    pub constant_c: Option<f64>,
    pub worst_t: f64,
    pub worst_index: usize,
    /// Barrier on the solution grid.
    pub omega: Vec<(f64, f64)>,
}

impl SandwichReport {
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::SandwichViolated {
                t: self.worst_t,
                index: self.worst_index,
                excess: self.lower_excess.max(self.upper_excess).max(self.constant_excess),
            })
        }
    }
}

/// Barrier on the solution grid: the trapezoid analogue of
/// `ω(t) = 1 + K₁∫₀^t ‖e^{−sL}u₀‖_∞^{p−1} ω(s)^p ds`, solved implicitly at
/// each node. It dominates the discrete iterates for the same reason the
/// continuous barrier dominates the continuous ones.
fn discrete_barrier(sol: &MildSolution, k1: f64) -> Result<Vec<f64>> {
    let p = sol.nonlinearity.p;
    let dt = sol.dt();
    let a: Vec<f64> = sol
        .lower
        .iter()
        .map(|l| par::max_by(l.len(), |i| l[i].abs()).max(0.0).powf(p - 1.0))
        .collect();
    let mut omega = vec![1.0f64; a.len()];
    let mut sum = 0.0; // Σ_{i<j} w_i aᵢ ωᵢ^p without the K₁ factor
    for j in 1..a.len() {
        let wi = if j == 1 { 0.5 * dt } else { dt };
        sum += wi * a[j - 1] * omega[j - 1].powf(p);
        let base = 1.0 + k1 * sum;
        let c = k1 * 0.5 * dt * a[j];
        let mut w = base;
        let mut solved = c == 0.0;
        for _ in 0..100 {
            if solved {
                break;
            }
            let phi = w - base - c * w.powf(p);
            let dphi = 1.0 - c * p * w.powf(p - 1.0);
            if dphi <= 0.0 {
                return Err(Error::BarrierBlowup { t: sol.times[j] });
            }
            let step = phi / dphi;
            w -= step;
            if step.abs() <= 1e-15 * w {
                solved = true;
            }
        }
        omega[j] = w;
    }
    Ok(omega)
}

/// Check `e^{−tL}u₀ ≤ u(t) ≤ ω̃(t)e^{−tL}u₀ ≤ C·e^{−tL}u₀` at every snapshot
/// with slack `1e-9·sup u`. `C` is only enforced when the certificate is
/// satisfied.
pub fn sandwich_check(sol: &MildSolution, cert: &ExistenceCertificate) -> Result<SandwichReport> {
    let k1 = cert.k1;
    let omega = discrete_barrier(sol, k1)?;
    let scale = sol
        .snapshots
        .iter()
        .map(|u| par::max_by(u.len(), |i| u[i].abs()))
        .fold(0.0, f64::max);
    let slack = 1e-9 * scale;
    let c = cert.constant_c.filter(|_| cert.is_satisfied());
    let (mut lower_excess, mut upper_excess, mut constant_excess, mut max_ratio) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let (mut worst_t, mut worst_index, mut worst) = (0.0, 0, f64::NEG_INFINITY);
    for (j, (u, l)) in sol.snapshots.iter().zip(&sol.lower).enumerate() {
        let w = omega[j];
        for i in 0..u.len() {
            let le = l[i] - u[i];
            let ue = u[i] - w * l[i];
            let ce = c.map_or(0.0, |c| (w - c) * l[i]);
            lower_excess = lower_excess.max(le);
            upper_excess = upper_excess.max(ue);
            constant_excess = constant_excess.max(ce);
            if l[i] > 1e-12 * scale {
                max_ratio = max_ratio.max(u[i] / l[i]);
            }
            let e = le.max(ue).max(ce);
            if e > worst {
                worst = e;
                worst_t = sol.times[j];
                worst_index = i;
            }
        }
    }
    let omega_max = omega.iter().cloned().fold(1.0, f64::max);
    Ok(SandwichReport {
        passed: lower_excess <= slack && upper_excess <= slack && constant_excess <= slack,
        lower_excess,
        upper_excess,
        constant_excess,
        slack,
        max_ratio,
        omega_max,
        constant_c: c,
        worst_t,
        worst_index,
        omega: sol.times.iter().copied().zip(omega).collect(),
    })
}

/// `ε·h_γ`.
pub fn small_data_generator(sg: &HeatSemigroup, gamma: f64, eps: f64) -> Result<GridField> {
    if eps < 0.0 {
        return Err(Error::NegativeData { min: eps });
    }
    let h = sg.heat_kernel(gamma)?;
    Ok(h.scaled(eps).with_time(gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub passed: bool,
    pub gamma: f64,
    pub c_env: f64,
    /// `max u/(C_env·h_{t+γ})` over points with a positive envelope.
    pub max_ratio: f64,
    pub max_excess: f64,
    pub slack: f64,
    pub worst_t: f64,
    pub worst_index: usize,
}

impl EnvelopeReport {
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::EnvelopeViolated {
                t: self.worst_t,
                index: self.worst_index,
                ratio: self.max_ratio,
            })
        }
    }
}

/// Check `u(tⱼ) ≤ C_env·h_{tⱼ+γ}` at every snapshot.
pub fn decay_envelope_check(sol: &MildSolution, gamma: f64, c_env: f64) -> Result<EnvelopeReport> {
    let sg = &sol.semigroup;
    let h_gamma = sg.heat_kernel(gamma)?;
    let scale = sol
        .snapshots
        .iter()
        .map(|u| par::max_by(u.len(), |i| u[i].abs()))
        .fold(0.0, f64::max);
    let slack = 1e-9 * scale;
    let mut max_ratio: f64 = 0.0;
    let mut max_excess = f64::NEG_INFINITY;
    let (mut worst_t, mut worst_index) = (0.0, 0);
    sg.orbit(h_gamma.values(), &sol.times, |j, t, h| {
        let u = &sol.snapshots[j];
        for i in 0..u.len() {
            let env = c_env * h[i];
            let excess = u[i] - env;
            if excess > max_excess {
                max_excess = excess;
                worst_t = t;
                worst_index = i;
            }
            if env > 1e-12 * scale {
                max_ratio = max_ratio.max(u[i] / env);
            }
        }
    })?;
    Ok(EnvelopeReport {
        passed: max_excess <= slack,
        gamma,
        c_env,
        max_ratio,
        max_excess,
        slack,
        worst_t,
        worst_index,
    })
}
