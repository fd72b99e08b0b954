use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blowup::{ap_monitor, integrate_nonlinear, Classification, MonitorVerdict, Termination};
use crate::error::{Error, Result};
use crate::field::GridField;
use crate::group::{GroupKind, GroupModel, Growth, VolumeProfile, EnvelopeConstants};
use crate::heat::{HeatSemigroup, Scheme};
use crate::mild::{
    decay_envelope_check, epsilon_threshold, existence_condition_with, picard_solve_with,
    sandwich_check, small_data_generator, Nonlinearity, Verdict,
};
use crate::par;

use super::config::{EpsilonMode, ExperimentConfig, Family};
use super::{csv_num, csv_opt, csv_text, snake, AbstractProfile, GroupSection, Report};

/// One `(p, ε, γ)` cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub p: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

/// Immutable state shared by every cell of an experiment.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub model: Arc<GroupModel>,
    pub semigroup: HeatSemigroup,
    /// Heat-kernel profile for the certificate tail; `None` on compact models.
    pub profile: Option<VolumeProfile>,
    file_data: Option<GridField>,
}

fn semigroup_for(section: &GroupSection, g: &Arc<GroupModel>) -> Result<HeatSemigroup> {
    match section.scheme {
        Some(s) => HeatSemigroup::new(g, s),
        None => HeatSemigroup::for_model(g),
    }
}

/// Exact Gaussian constants on ℝⁿ; on other noncompact models the envelope
/// of sampled `‖h_t‖_∞·t^{D/2}` over `t ∈ [1, 8]`.
fn model_profile(sg: &HeatSemigroup) -> Result<Option<VolumeProfile>> {
    let g = sg.model();
    match g.kind {
        GroupKind::Torus => Ok(None),
        GroupKind::Euclidean => Ok(Some(VolumeProfile::euclidean(g.ndim() as u32))),
        GroupKind::Heisenberg1 => {
            let d = g.global_dimension() as f64;
            let curve = sg.kernel_curve(&[1.0, 2.0, 4.0, 8.0])?;
            let samples: Vec<(f64, f64)> = curve.samples.iter().map(|s| (s.t, s.sup_norm)).collect();
            let c = samples
                .iter()
                .map(|(t, s)| s * t.powf(d / 2.0))
                .fold(0.0, f64::max);
            Ok(Some(VolumeProfile {
                growth: Growth::Polynomial { a: d, b: g.local_dim as f64 },
                constants: EnvelopeConstants {
                    small_lower: c,
                    small_upper: c,
                    large_lower: c,
                    large_upper: c,
                },
                samples,
            }))
        }
    }
}

impl Context {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let model = config.group.build()?;
        let semigroup = semigroup_for(&config.group, &model)?;
        let profile = model_profile(&semigroup)?;
        let file_data = match (config.data.family, &config.data.file) {
            (Family::File, Some(path)) => {
                let f = GridField::read_binary(&model, path)?;
                f.require_nonnegative()?;
                Some(f)
            }
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            model,
            semigroup,
            profile,
            file_data,
        })
    }

    /// Cells sorted by `(p, ε, γ)`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &p in &self.config.nonlinearity.p {
            for &epsilon in &self.config.data.epsilon {
                for &gamma in &self.config.data.gamma {
                    out.push(Cell { p, epsilon, gamma });
                }
            }
        }
        out.sort_by(|a, b| {
            a.p.total_cmp(&b.p)
                .then(a.epsilon.total_cmp(&b.epsilon))
                .then(a.gamma.total_cmp(&b.gamma))
        });
        out.dedup();
        out
    }

    pub fn nonlinearity(&self, p: f64) -> Result<Nonlinearity> {
        self.config.nonlinearity.build(p)
    }

    /// Unscaled data of the configured family.
    pub fn base_data(&self, gamma: f64) -> Result<GridField> {
        match self.config.data.family {
            Family::Kernel => small_data_generator(&self.semigroup, gamma, 1.0),
            Family::Constant => Ok(GridField::constant(&self.model, 1.0)),
            Family::File => Ok(self.file_data.clone().expect("file data loaded with the context")),
        }
    }

    /// Applied scale and data for a cell.
    pub fn data(&self, cell: &Cell, nl: &Nonlinearity) -> Result<(f64, GridField)> {
        let base = self.base_data(cell.gamma)?;
        let scale = match self.config.data.epsilon_mode {
            EpsilonMode::Absolute => cell.epsilon,
            EpsilonMode::Threshold => {
                let search = epsilon_threshold(
                    &self.semigroup,
                    &base,
                    nl,
                    self.profile.as_ref(),
                    &self.config.controls.existence(),
                    1e-6,
                )?;
                cell.epsilon * search.threshold
            }
        };
        Ok((scale, base.scaled(scale)))
    }

    /// Kernel constant `C_h` with `‖h_t‖_∞ ≤ C_h t^{-e/2}` on sampled times,
    /// `e` the profile exponent of the matching regime.
    pub fn kernel_constant(&self, profile: AbstractProfile) -> Result<f64> {
        let (small, large) = match profile {
            AbstractProfile::Polynomial { a, b } => (b, a),
            AbstractProfile::Exponential { d } => (d, 0.0),
        };
        let t0 = self.semigroup.min_kernel_time().max(0.05);
        let times: Vec<f64> = (0..8).map(|k| t0 * (8.0 / t0).powf(k as f64 / 7.0)).collect();
        let curve = self.semigroup.kernel_curve(&times)?;
        Ok(curve
            .samples
            .iter()
            .map(|s| {
                let e = if s.t < 1.0 { small } else { large };
                s.sup_norm * s.t.powf(e / 2.0)
            })
            .fold(0.0, f64::max))
    }

    pub fn cell_seed(&self, index: usize) -> u64 {
        self.config.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenProbe {
    pub fields: usize,
    pub t: f64,
    /// Smallest `e^{−tL}(F^p) − (e^{−tL}F)^p` over all points and fields.
    pub worst_gap: f64,
    pub failures: usize,
}

/// Check `e^{−tL}(F^p) ≥ (e^{−tL}F)^p − 1e−12` on seeded random fields with
/// values in `[0, 1)`.
pub fn jensen_probe(sg: &HeatSemigroup, p: f64, seed: u64, fields: usize, t: f64) -> Result<JensenProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sg.model().len();
    let mut worst_gap = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..fields {
        // a random power skews some fields toward sparse spikes
        let shape = 1.0 + 4.0 * rng.random::<f64>();
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powf(shape)).collect();
        let fp: Vec<f64> = f.iter().map(|v| v.powf(p)).collect();
        let lhs = sg.apply_values(&fp, t);
        let rhs = sg.apply_values(&f, t);
        let gap = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| a - b.max(0.0).powf(p))
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.min(gap);
        if gap < -1e-12 {
            failures += 1;
        }
    }
    Ok(JensenProbe {
        fields,
        t,
        worst_gap,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Scale actually applied to the base data.
    pub data_scale: Option<f64>,
    pub classification: Classification,
    pub termination: Option<Termination>,
    pub t_star: Option<f64>,
    /// Last time reached by the integrator.
    pub t_end: Option<f64>,
    pub certificate: Option<Verdict>,
    pub certificate_integral: Option<f64>,
    pub picard_converged: Option<bool>,
    pub picard_iterations: Option<usize>,
    pub picard_residual: Option<f64>,
    pub sandwich: Option<bool>,
    pub envelope: Option<bool>,
    pub ap_monitor: Option<MonitorVerdict>,
    pub ap_max_ratio: Option<f64>,
    pub jensen_failures: Option<usize>,
    pub t_star_refined: Option<f64>,
    pub invariant_violation: bool,
    pub status: String,
}

impl SweepRow {
    fn new(cell: &Cell) -> Self {
        Self {
            p: cell.p,
            epsilon: cell.epsilon,
            gamma: cell.gamma,
            data_scale: None,
            classification: Classification::Inconclusive,
            termination: None,
            t_star: None,
            t_end: None,
            certificate: None,
            certificate_integral: None,
            picard_converged: None,
            picard_iterations: None,
            picard_residual: None,
            sandwich: None,
            envelope: None,
            ap_monitor: None,
            ap_max_ratio: None,
            jensen_failures: None,
            t_star_refined: None,
            invariant_violation: false,
            status: "ok".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub version: String,
    pub group: GroupSection,
    pub scheme: Scheme,
    pub global_dimension: u32,
    /// `None` when `p_F = ∞`.
    pub fujita_exponent: Option<f64>,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn invariant_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.invariant_violation).count()
    }

    pub fn row(&self, p: f64, epsilon: f64, gamma: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.p == p && r.epsilon == epsilon && r.gamma == gamma)
    }
}

impl Report for SweepTable {
    const KIND: &'static str = "sweep";

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "p,epsilon,gamma,data_scale,classification,termination,t_star,t_end,certificate,\
             certificate_integral,picard_converged,picard_iterations,picard_residual,sandwich,\
             envelope,ap_monitor,ap_max_ratio,jensen_failures,t_star_refined,invariant_violation,status"
        )?;
        let b = |v: Option<bool>| v.map(|b| b.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_num(r.p),
                csv_num(r.epsilon),
                csv_num(r.gamma),
                csv_opt(r.data_scale),
                snake(&r.classification),
                r.termination.as_ref().map(snake).unwrap_or_default(),
                csv_opt(r.t_star),
                csv_opt(r.t_end),
                r.certificate.as_ref().map(snake).unwrap_or_default(),
                csv_opt(r.certificate_integral),
                b(r.picard_converged),
                r.picard_iterations.map(|k| k.to_string()).unwrap_or_default(),
                csv_opt(r.picard_residual),
                b(r.sandwich),
                b(r.envelope),
                r.ap_monitor.as_ref().map(snake).unwrap_or_default(),
                csv_opt(r.ap_max_ratio),
                r.jensen_failures.map(|k| k.to_string()).unwrap_or_default(),
                csv_opt(r.t_star_refined),
                r.invariant_violation,
                csv_text(&r.status),
            )?;
        }
        Ok(())
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn evaluate(ctx: &Context, refined: Option<&HeatSemigroup>, index: usize, cell: &Cell) -> SweepRow {
    let mut row = SweepRow::new(cell);
    let mut notes: Vec<String> = Vec::new();
    let controls = &ctx.config.controls;
    let sg = &ctx.semigroup;
    let nl = match ctx.nonlinearity(cell.p) {
        Ok(nl) => nl,
        Err(e) => {
            row.status = e.to_string();
            return row;
        }
    };
    let (scale, u0) = match ctx.data(cell, &nl) {
        Ok(d) => d,
        Err(e) => {
            row.status = e.to_string();
            return row;
        }
    };
    row.data_scale = Some(scale);

    match existence_condition_with(sg, &u0, &nl, ctx.profile.as_ref(), &controls.existence()) {
        Ok(cert) => {
            row.certificate = Some(cert.verdict);
            row.certificate_integral = Some(cert.integral);
            if cert.is_satisfied() {
                match picard_solve_with(sg, &u0, &nl, &controls.picard()) {
                    Ok(sol) => {
                        row.picard_converged = Some(true);
                        row.picard_iterations = Some(sol.iterations);
                        row.picard_residual = Some(sol.residual);
                        match sandwich_check(&sol, &cert) {
                            Ok(s) => {
                                row.sandwich = Some(s.passed);
                                if !s.passed {
                                    row.invariant_violation = true;
                                    notes.push(format!("sandwich violated at t = {}", s.worst_t));
                                }
                            }
                            Err(e) => notes.push(e.to_string()),
                        }
                        if ctx.config.data.family == Family::Kernel {
                            if let Some(c) = cert.constant_c {
                                match decay_envelope_check(&sol, cell.gamma, scale * c) {
                                    Ok(env) => row.envelope = Some(env.passed),
                                    Err(e) => notes.push(e.to_string()),
                                }
                            }
                        }
                    }
                    Err(e) => {
                        row.picard_converged = Some(false);
                        row.invariant_violation |= e.is_invariant_violation();
                        notes.push(e.to_string());
                    }
                }
            }
        }
        Err(e) => notes.push(e.to_string()),
    }

    match integrate_nonlinear(sg, &u0, &nl, &controls.integration()) {
        Ok(r) => {
            row.classification = r.classification;
            row.termination = Some(r.termination);
            row.t_star = r.t_star;
            row.t_end = Some(r.t_end);
            if let Some(e) = r.fit_error {
                notes.push(e);
            }
            if r.classification == Classification::Blowup && row.certificate == Some(Verdict::Satisfied) {
                row.invariant_violation = true;
                notes.push("blow-up despite a satisfied certificate".into());
            }
            if let (Some(rsg), Classification::Blowup) = (refined, r.classification) {
                let scale_down = (1u64 << controls.refinement_levels) as f64;
                let mut c = controls.integration();
                c.dt0 /= scale_down;
                c.dt_max = c.dt_max.map(|d| d / scale_down);
                c.dt_min = c.dt_min.min(c.dt0);
                let refined_run = Context::refine_data(ctx, rsg, cell, scale)
                    .and_then(|u| integrate_nonlinear(rsg, &u, &nl, &c));
                match refined_run {
                    Ok(rr) => row.t_star_refined = rr.t_star,
                    Err(e) => notes.push(format!("refined run: {e}")),
                }
            }
        }
        Err(e) => notes.push(e.to_string()),
    }

    if nl.k2.is_some() {
        match ap_monitor(sg, &u0, &nl, &controls.probe_times()) {
            Ok(m) => {
                row.ap_monitor = Some(m.verdict);
                row.ap_max_ratio = Some(m.max_ratio);
            }
            Err(e) => notes.push(e.to_string()),
        }
    }

    if controls.jensen_probes > 0 {
        let t = controls.t_max.min(1.0);
        match jensen_probe(sg, cell.p, ctx.cell_seed(index), controls.jensen_probes, t) {
            Ok(j) => {
                row.jensen_failures = Some(j.failures);
                if j.failures > 0 {
                    row.invariant_violation = true;
                    notes.push(format!("Jensen inequality failed, worst gap {}", j.worst_gap));
                }
            }
            Err(e) => notes.push(e.to_string()),
        }
    }

    if !notes.is_empty() {
        row.status = notes.join("; ");
    }
    row
}

impl Context {
    fn refine_data(&self, rsg: &HeatSemigroup, cell: &Cell, scale: f64) -> Result<GridField> {
        let g = rsg.model();
        match self.config.data.family {
            Family::Kernel => small_data_generator(rsg, cell.gamma, scale),
            Family::Constant => Ok(GridField::constant(g, scale)),
            Family::File => Err(Error::Validation("file data cannot be refined".into())),
        }
    }
}

/// Evaluate every cell. Per-cell failures land in the row status; only
/// configuration-level errors abort.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepTable> {
    let ctx = Context::new(cfg)?;
    let refined = if cfg.controls.refinement_levels > 0 {
        let section = cfg.group.refined(cfg.controls.refinement_levels);
        let g = section.build()?;
        Some(semigroup_for(&section, &g)?)
    } else {
        None
    };
    let cells: Vec<(usize, Cell)> = ctx.cells().into_iter().enumerate().collect();
    let rows = par::map_collect(&cells, |(k, c)| evaluate(&ctx, refined.as_ref(), *k, c));
    let pf = ctx.model.fujita_exponent();
    Ok(SweepTable {
        version: env!("CARGO_PKG_VERSION").to_string(),
        group: cfg.group.clone(),
        scheme: ctx.semigroup.scheme(),
        global_dimension: ctx.model.global_dimension(),
        fujita_exponent: pf.is_finite().then_some(pf),
        seed: cfg.seed,
        warnings: cfg.warnings(),
        rows,
    })
}
