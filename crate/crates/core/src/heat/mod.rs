//! Discrete heat semigroup `e^{−tL}` on the lattice models.
//!
//! Fully periodic Euclidean boxes and tori use exact Fourier multipliers.
//! Everything else, and ℍ¹ in particular, runs the nonnegative sparse
//! generator from [`stencil`] with explicit or Crank–Nicolson steps whose
//! size is capped so that each step is a substochastic matrix.

mod bounds;
pub mod spectral;
pub mod stencil;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::group::{GroupKind, GroupModel};
use crate::par;

pub use bounds::{verify_kernel_bounds, verify_kernel_bounds_with, BoundReport};
pub use spectral::SpectralPlan;
pub use stencil::Generator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Spectral,
    CrankNicolson,
    ExplicitSubstochastic,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Spectral => "spectral",
            Scheme::CrankNicolson => "crank_nicolson",
            Scheme::ExplicitSubstochastic => "explicit_substochastic",
        }
    }

    /// Spectral where the model allows it, explicit otherwise.
    pub fn default_for(g: &GroupModel) -> Self {
        if spectral_supported(g).is_ok() {
            Scheme::Spectral
        } else {
            Scheme::ExplicitSubstochastic
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Scheme::Spectral),
            "crank_nicolson" => Ok(Scheme::CrankNicolson),
            "explicit_substochastic" => Ok(Scheme::ExplicitSubstochastic),
            other => Err(Error::SchemeUnsupported {
                scheme: other.into(),
                reason: "unknown scheme".into(),
            }),
        }
    }
}

fn spectral_supported(g: &GroupModel) -> Result<()> {
    let reason = if g.kind == GroupKind::Heisenberg1 {
        Some("the sub-Laplacian of heisenberg1 has no lattice Fourier symbol")
    } else if !g.is_fully_periodic() {
        Some("Fourier multipliers need every axis periodic")
    } else {
        None
    };
    match reason {
        Some(r) => Err(Error::SchemeUnsupported {
            scheme: Scheme::Spectral.name().into(),
            reason: r.into(),
        }),
        None => Ok(()),
    }
}

/// Evidence that one explicit step is a substochastic matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubstochasticCertificate {
    pub min_weight: f64,
    pub max_row_sum: f64,
    /// Off-diagonal mass removed to restore positivity; the directional
    /// stencil never produces negative weights, so this is zero.
    pub clipped_mass: f64,
}

impl SubstochasticCertificate {
    pub fn holds(&self) -> bool {
        self.min_weight >= 0.0 && self.max_row_sum <= 1.0 + 1e-14
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Spectral(Arc<SpectralPlan>),
    Stencil(Arc<Generator>),
}

/// One step `e^{−ΔtL}` of a fixed scheme.
#[derive(Debug, Clone)]
pub struct HeatOperator {
    pub scheme: Scheme,
    pub dt: f64,
    model: Arc<GroupModel>,
    backend: Backend,
    multipliers: Option<Vec<f64>>,
    pub certificate: Option<SubstochasticCertificate>,
}

impl HeatOperator {
    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn is_identity(&self) -> bool {
        self.dt == 0.0
    }

    /// `e^{−Δt λ_k}` per Fourier mode (spectral only).
    pub fn multipliers(&self) -> Option<&[f64]> {
        self.multipliers.as_deref()
    }

    pub fn generator(&self) -> Option<&Generator> {
        match &self.backend {
            Backend::Stencil(a) => Some(a),
            Backend::Spectral(_) => None,
        }
    }

    pub fn step_values(&self, u: &[f64]) -> Vec<f64> {
        if self.dt == 0.0 {
            return u.to_vec();
        }
        match &self.backend {
            Backend::Spectral(plan) => {
                plan.apply_multipliers(u, self.multipliers.as_ref().expect("spectral multipliers"))
            }
            Backend::Stencil(a) => {
                let mut out = vec![0.0; u.len()];
                match self.scheme {
                    Scheme::ExplicitSubstochastic => a.euler_step(u, self.dt, &mut out),
                    _ => crank_nicolson_step(a, u, self.dt, &mut out),
                }
                out
            }
        }
    }

    pub fn step(&self, u: &GridField) -> Result<GridField> {
        self.apply_steps(u, 1)
    }

    /// `n` successive steps.
    pub fn apply_steps(&self, u: &GridField, n: usize) -> Result<GridField> {
        if u.model().as_ref() != self.model.as_ref() {
            return Err(Error::ShapeMismatch);
        }
        let mut v = u.values().to_vec();
        for _ in 0..n {
            v = self.step_values(&v);
        }
        let mut out = GridField::new(Arc::clone(&self.model), v)?;
        out.time = u.time.map(|t| t + n as f64 * self.dt);
        Ok(out)
    }
}

fn crank_nicolson_step(a: &Generator, u: &[f64], dt: f64, out: &mut [f64]) {
    let mut rhs = vec![0.0; u.len()];
    a.half_step_rhs(u, dt, &mut rhs);
    let scale = par::max_by(rhs.len(), |i| rhs[i].abs()).max(f64::MIN_POSITIVE);
    let mut x = rhs.clone();
    let mut next = vec![0.0; u.len()];
    for _ in 0..500 {
        a.jacobi_sweep(&x, &rhs, dt, &mut next);
        let change = par::max_by(x.len(), |i| (next[i] - x[i]).abs());
        std::mem::swap(&mut x, &mut next);
        if change <= 1e-15 * scale {
            break;
        }
    }
    out.copy_from_slice(&x);
}

/// Assemble `e^{−ΔtL}` for the given scheme.
///
/// Stencil schemes enforce a positivity cap: `Δt ≤ 1/max|Aᵢᵢ|` for explicit
/// steps, `Δt ≤ 2/max|Aᵢᵢ|` for Crank–Nicolson (both halves are then
/// nonnegative: the right factor entrywise, the left factor an M-matrix).
pub fn build_propagator(g: &Arc<GroupModel>, dt: f64, scheme: Scheme) -> Result<HeatOperator> {
    HeatSemigroup::new(g, scheme)?.propagator(dt)
}

/// Reusable `t ↦ e^{−tL}` for one model and scheme.
#[derive(Debug, Clone)]
pub struct HeatSemigroup {
    model: Arc<GroupModel>,
    scheme: Scheme,
    backend: Backend,
}

impl HeatSemigroup {
    pub fn new(g: &Arc<GroupModel>, scheme: Scheme) -> Result<Self> {
        let backend = match scheme {
            Scheme::Spectral => {
                spectral_supported(g)?;
                Backend::Spectral(Arc::new(SpectralPlan::new(g)))
            }
            _ => Backend::Stencil(Arc::new(Generator::assemble(g))),
        };
        Ok(Self {
            model: Arc::clone(g),
            scheme,
            backend,
        })
    }

    pub fn for_model(g: &Arc<GroupModel>) -> Result<Self> {
        Self::new(g, Scheme::default_for(g))
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Largest step admitted by the positivity cap (infinite for spectral).
    pub fn max_step(&self) -> f64 {
        match (&self.backend, self.scheme) {
            (Backend::Spectral(_), _) => f64::INFINITY,
            (Backend::Stencil(a), Scheme::CrankNicolson) => 2.0 * a.explicit_dt_limit(),
            (Backend::Stencil(a), _) => a.explicit_dt_limit(),
        }
    }

    pub fn propagator(&self, dt: f64) -> Result<HeatOperator> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidControls(format!("time step {dt} must be finite and ≥ 0")));
        }
        let limit = self.max_step();
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        let (multipliers, certificate) = match &self.backend {
            Backend::Spectral(plan) => (Some(plan.multipliers(dt)), None),
            Backend::Stencil(a) => {
                let cert = if self.scheme == Scheme::ExplicitSubstochastic {
                    let (min_weight, max_row_sum) = a.explicit_row_stats(dt);
                    Some(SubstochasticCertificate {
                        min_weight,
                        max_row_sum,
                        clipped_mass: 0.0,
                    })
                } else {
                    None
                };
                (None, cert)
            }
        };
        Ok(HeatOperator {
            scheme: self.scheme,
            dt,
            model: Arc::clone(&self.model),
            backend: self.backend.clone(),
            multipliers,
            certificate,
        })
    }

    /// Number and size of stencil steps used to reach time `t`.
    pub fn substeps(&self, t: f64) -> (usize, f64) {
        let cap = self.max_step();
        if t == 0.0 || !cap.is_finite() {
            return (usize::from(t > 0.0), t);
        }
        let n = (t / cap * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (n, t / n as f64)
    }

    pub fn apply_values(&self, u: &[f64], t: f64) -> Vec<f64> {
        if t == 0.0 {
            return u.to_vec();
        }
        match &self.backend {
            Backend::Spectral(plan) => plan.heat(u, t),
            Backend::Stencil(a) => {
                let (n, dt) = self.substeps(t);
                let mut v = u.to_vec();
                let mut out = vec![0.0; u.len()];
                for _ in 0..n {
                    match self.scheme {
                        Scheme::CrankNicolson => crank_nicolson_step(a, &v, dt, &mut out),
                        _ => a.euler_step(&v, dt, &mut out),
                    }
                    std::mem::swap(&mut v, &mut out);
                }
                v
            }
        }
    }

    /// Visit `e^{−tL}u` at each of the nondecreasing `times`. The spectral
    /// backend transforms `u` once; stencil backends march forward.
    pub fn orbit<F>(&self, u: &[f64], times: &[f64], mut visit: F) -> Result<()>
    where
        F: FnMut(usize, f64, &[f64]),
    {
        if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::InvalidControls("orbit times must be nonnegative and sorted".into()));
        }
        match &self.backend {
            Backend::Spectral(plan) => {
                let spec = plan.forward(u);
                for (k, &t) in times.iter().enumerate() {
                    let mut s = spec.clone();
                    let lam = plan.eigenvalues();
                    for (c, &l) in s.iter_mut().zip(lam) {
                        *c *= (-t * l).exp();
                    }
                    visit(k, t, &plan.inverse_real(s));
                }
            }
            Backend::Stencil(_) => {
                let mut v = u.to_vec();
                let mut now = 0.0;
                for (k, &t) in times.iter().enumerate() {
                    v = self.apply_values(&v, t - now);
                    now = t;
                    visit(k, t, &v);
                }
            }
        }
        Ok(())
    }

    /// `e^{−tL}u`. The time tag advances by `t` when present.
    pub fn apply(&self, u: &GridField, t: f64) -> Result<GridField> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidControls(format!("time {t} must be finite and ≥ 0")));
        }
        if u.model().as_ref() != self.model.as_ref() {
            return Err(Error::ShapeMismatch);
        }
        let mut out = GridField::new(Arc::clone(&self.model), self.apply_values(u.values(), t))?;
        out.time = u.time.map(|s| s + t);
        Ok(out)
    }

    /// Smallest `t` the lattice resolves: `√t ≥ 2·max hᵢ`.
    pub fn min_kernel_time(&self) -> f64 {
        let h = self.model.max_spacing();
        4.0 * h * h
    }

    pub fn heat_kernel(&self, t: f64) -> Result<GridField> {
        let min_sqrt_t = 2.0 * self.model.max_spacing();
        if !(t > 0.0) || t.sqrt() < min_sqrt_t * (1.0 - 1e-12) {
            return Err(Error::TooSmallForGrid { t, min_sqrt_t });
        }
        let delta = GridField::delta(&self.model);
        Ok(self.apply(&delta, t)?.with_time(t))
    }

    /// `(t, ‖h_t‖_∞, ‖h_t‖₁)` at each time; stencil schemes march forward
    /// from one probe time to the next.
    pub fn kernel_curve(&self, times: &[f64]) -> Result<KernelCurve> {
        let mut ts = times.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut samples = Vec::with_capacity(ts.len());
        let mut current: Option<GridField> = None;
        for &t in &ts {
            let h = match (&self.backend, current.take()) {
                (Backend::Stencil(_), Some(prev)) => {
                    let t0 = prev.time.unwrap_or(0.0);
                    self.apply(&prev, t - t0)?
                }
                _ => self.heat_kernel(t)?,
            };
            samples.push(KernelSample {
                t,
                sup_norm: h.sup_norm(),
                mass: h.mass(),
            });
            current = Some(h);
        }
        Ok(KernelCurve { samples })
    }
}

pub fn apply_semigroup(g: &Arc<GroupModel>, u0: &GridField, t: f64) -> Result<GridField> {
    HeatSemigroup::for_model(g)?.apply(u0, t)
}

pub fn heat_kernel(g: &Arc<GroupModel>, t: f64) -> Result<GridField> {
    HeatSemigroup::for_model(g)?.heat_kernel(t)
}

pub fn kernel_curve(g: &Arc<GroupModel>, times: &[f64]) -> Result<KernelCurve> {
    HeatSemigroup::for_model(g)?.kernel_curve(times)
}

pub fn mass(u: &GridField) -> f64 {
    u.mass()
}

pub fn sup_norm(u: &GridField) -> f64 {
    u.sup_norm()
}

/// `(a ∗ b)(x) = Σ_y a(x − y) b(y)·∏hᵢ` on abelian periodic lattices.
pub fn group_convolve(g: &Arc<GroupModel>, a: &GridField, b: &GridField) -> Result<GridField> {
    if g.kind == GroupKind::Heisenberg1 {
        return Err(Error::UnsupportedModel(
            "heisenberg1 convolution is only available through the semigroup".into(),
        ));
    }
    if !g.is_fully_periodic() {
        return Err(Error::UnsupportedModel(
            "convolution needs every axis periodic".into(),
        ));
    }
    a.check_same_lattice(b)?;
    if a.model().as_ref() != g.as_ref() {
        return Err(Error::ShapeMismatch);
    }
    let plan = SpectralPlan::new(g);
    let mut fa = plan.forward(a.values());
    let fb = plan.forward(b.values());
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    let cyc = plan.inverse_real(fa);
    // the identity sits at index N/2 on every axis, so the cyclic result is
    // shifted by N/2
    let cell = g.cell_volume();
    let strides = g.strides();
    let mut out = vec![0.0; g.len()];
    par::fill(&mut out, |flat| {
        let idx = g.multi_index(flat);
        let mut src = 0;
        for (k, axis) in g.axes.iter().enumerate() {
            src += ((idx[k] + axis.points / 2) % axis.points) * strides[k];
        }
        cyc[src] * cell
    });
    GridField::new(Arc::clone(g), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub t: f64,
    pub sup_norm: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelCurve {
    pub samples: Vec<KernelSample>,
}

impl KernelCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,sup_norm,mass")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{}",
                crate::report::g12(s.t),
                crate::report::g12(s.sup_norm),
                crate::report::g12(s.mass)
            )?;
        }
        Ok(())
    }

    /// Least-squares slope of `log ‖h_t‖_∞` against `log t`.
    pub fn log_slope(&self) -> f64 {
        let xs: Vec<f64> = self.samples.iter().map(|s| s.t.ln()).collect();
        let ys: Vec<f64> = self.samples.iter().map(|s| s.sup_norm.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }
}
