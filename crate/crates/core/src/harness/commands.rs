use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::blowup::{ap_monitor, integrate_nonlinear, BlowupReport, MonitorReport};
use crate::error::{Error, Result};
use crate::heat::{verify_kernel_bounds_with, BoundReport, KernelSample, Scheme};
use crate::mild::{
    existence_condition_with, fixed_point_residual, picard_solve_with, sandwich_check,
    ExistenceCertificate, MildSummary,
};
use crate::par;

use super::sweep::{Cell, Context};
use super::{
    certify_abstract, csv_num, csv_opt, csv_text, snake, AbstractCertificate, ExperimentConfig,
    GroupSection, Report,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCheckReport {
    pub group: GroupSection,
    pub scheme: Scheme,
    pub curve: Vec<KernelSample>,
    /// Slope of `ln‖h_t‖_∞` against `ln t` over the probe times.
    pub log_slope: f64,
    pub bounds: BoundReport,
}

impl Report for KernelCheckReport {
    const KIND: &'static str = "kernel-check";

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "log_slope,lower_prefactor,lower_rate,upper_prefactor,upper_rate,violation_ratio,slack,passed"
        )?;
        let b = &self.bounds;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            csv_num(self.log_slope),
            csv_num(b.lower_prefactor),
            csv_num(b.lower_rate),
            csv_num(b.upper_prefactor),
            csv_num(b.upper_rate),
            csv_num(b.violation_ratio),
            csv_num(b.slack),
            b.passed
        )?;
        Ok(())
    }
}

/// Kernel sup-norm curve and two-sided Gaussian envelope fit for `[kernel]`.
pub fn run_kernel_check(cfg: &ExperimentConfig) -> Result<KernelCheckReport> {
    let k = cfg
        .kernel
        .as_ref()
        .ok_or_else(|| Error::Validation("kernel-check needs a [kernel] section".into()))?;
    let model = cfg.group.build()?;
    let sg = match cfg.group.scheme {
        Some(s) => crate::heat::HeatSemigroup::new(&model, s)?,
        None => crate::heat::HeatSemigroup::for_model(&model)?,
    };
    let curve = sg.kernel_curve(&k.times)?;
    let bounds = verify_kernel_bounds_with(&sg, &k.times, &k.radii, k.slack)?;
    Ok(KernelCheckReport {
        group: cfg.group.clone(),
        scheme: sg.scheme(),
        log_slope: curve.log_slope(),
        curve: curve.samples,
        bounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyRow {
    pub p: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub data_scale: Option<f64>,
    pub certificate: Option<ExistenceCertificate>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyTable {
    pub rows: Vec<CertifyRow>,
    pub abstract_certificates: Vec<AbstractCertificate>,
}

impl Report for CertifyTable {
    const KIND: &'static str = "certify";

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "source,p,epsilon,gamma,data_scale,verdict,integral,threshold,constant_c,status"
        )?;
        for r in &self.rows {
            let c = r.certificate.as_ref();
            writeln!(
                w,
                "model,{},{},{},{},{},{},{},{},{}",
                csv_num(r.p),
                csv_num(r.epsilon),
                csv_num(r.gamma),
                csv_opt(r.data_scale),
                c.map(|c| snake(&c.verdict)).unwrap_or_default(),
                csv_opt(c.map(|c| c.integral)),
                csv_opt(c.map(|c| c.threshold)),
                csv_opt(c.and_then(|c| c.constant_c)),
                csv_text(&r.status)
            )?;
        }
        for a in &self.abstract_certificates {
            writeln!(
                w,
                "abstract,{},{},{},{},{},{},{},{},{}",
                csv_num(a.p),
                csv_num(a.epsilon),
                csv_num(a.gamma),
                csv_num(a.epsilon),
                snake(&a.verdict),
                csv_opt(a.bound),
                csv_num(a.threshold),
                csv_num(a.c),
                if a.satisfied { "satisfied" } else { "unsatisfied" }
            )?;
        }
        Ok(())
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.abstract_certificates.is_empty()
    }
}

/// Existence certificates for every cell, plus closed-form certificates
/// when an `[abstract]` profile is configured. Without an explicit `c` the
/// constant is `2·C_h^{p−1}`, `C_h` fitted from the model's kernel.
pub fn run_certify(cfg: &ExperimentConfig) -> Result<CertifyTable> {
    let ctx = Context::new(cfg)?;
    let cells = ctx.cells();
    let rows = par::map_collect(&cells, |cell| {
        let mut row = CertifyRow {
            p: cell.p,
            epsilon: cell.epsilon,
            gamma: cell.gamma,
            data_scale: None,
            certificate: None,
            status: "ok".into(),
        };
        let mut run = || -> Result<()> {
            let nl = ctx.nonlinearity(cell.p)?;
            let (scale, u0) = ctx.data(cell, &nl)?;
            row.data_scale = Some(scale);
            row.certificate = Some(existence_condition_with(
                &ctx.semigroup,
                &u0,
                &nl,
                ctx.profile.as_ref(),
                &cfg.controls.existence(),
            )?);
            Ok(())
        };
        if let Err(e) = run() {
            row.status = e.to_string();
        }
        row
    });
    let mut abstract_certificates = Vec::new();
    if let Some(section) = &cfg.r#abstract {
        let profile = section.profile()?;
        let c_h = match section.c {
            Some(_) => None,
            None => Some(ctx.kernel_constant(profile)?),
        };
        for cell in &cells {
            let c = section.c.unwrap_or_else(|| 2.0 * c_h.expect("fitted").powf(cell.p - 1.0));
            abstract_certificates.push(certify_abstract(
                profile,
                cell.p,
                cell.gamma,
                cfg.nonlinearity.k1,
                cell.epsilon,
                c,
            )?);
        }
    }
    Ok(CertifyTable {
        rows,
        abstract_certificates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveRow {
    pub p: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub data_scale: Option<f64>,
    pub summary: Option<MildSummary>,
    /// Change from one extra application of the solution map.
    pub fixed_point_residual: Option<f64>,
    pub sandwich: Option<bool>,
    pub invariant_violation: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTable {
    pub rows: Vec<SolveRow>,
}

impl SolveTable {
    pub fn invariant_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.invariant_violation).count()
    }
}

impl Report for SolveTable {
    const KIND: &'static str = "solve";

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "p,epsilon,gamma,data_scale,iterations,residual,fixed_point_residual,max_value,sandwich,status"
        )?;
        for r in &self.rows {
            let s = r.summary.as_ref();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_num(r.p),
                csv_num(r.epsilon),
                csv_num(r.gamma),
                csv_opt(r.data_scale),
                s.map(|s| s.iterations.to_string()).unwrap_or_default(),
                csv_opt(s.map(|s| s.residual)),
                csv_opt(r.fixed_point_residual),
                csv_opt(s.map(|s| s.snapshots.iter().map(|x| x.max).fold(0.0, f64::max))),
                r.sandwich.map(|b| b.to_string()).unwrap_or_default(),
                csv_text(&r.status)
            )?;
        }
        Ok(())
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn cell_dir(cell: &Cell) -> String {
    format!("p{}_eps{}_gamma{}", cell.p, cell.epsilon, cell.gamma)
}

/// Picard solve for every cell on `[0, t_max]`. Field dumps go to
/// `out/fields/<cell>/` when `output.field_stride > 0`.
pub fn run_solve(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SolveTable> {
    let ctx = Context::new(cfg)?;
    let cells = ctx.cells();
    let rows = par::map_collect(&cells, |cell| {
        let mut row = SolveRow {
            p: cell.p,
            epsilon: cell.epsilon,
            gamma: cell.gamma,
            data_scale: None,
            summary: None,
            fixed_point_residual: None,
            sandwich: None,
            invariant_violation: false,
            status: "ok".into(),
        };
        let mut notes = Vec::new();
        let mut run = || -> Result<()> {
            let nl = ctx.nonlinearity(cell.p)?;
            let (scale, u0) = ctx.data(cell, &nl)?;
            row.data_scale = Some(scale);
            let sol = picard_solve_with(&ctx.semigroup, &u0, &nl, &cfg.controls.picard())?;
            row.summary = Some(sol.summary());
            row.fixed_point_residual = Some(fixed_point_residual(&sol));
            let cert = existence_condition_with(
                &ctx.semigroup,
                &u0,
                &nl,
                ctx.profile.as_ref(),
                &cfg.controls.existence(),
            )?;
            if cert.is_satisfied() {
                let s = sandwich_check(&sol, &cert)?;
                row.sandwich = Some(s.passed);
                if !s.passed {
                    row.invariant_violation = true;
                    notes.push(format!("sandwich violated at t = {}", s.worst_t));
                }
            }
            if let (Some(dir), stride) = (out, cfg.output.field_stride) {
                if stride > 0 {
                    sol.write_fields(&dir.join("fields").join(cell_dir(cell)), stride)?;
                }
            }
            Ok(())
        };
        if let Err(e) = run() {
            row.invariant_violation |= e.is_invariant_violation();
            notes.push(e.to_string());
        }
        if !notes.is_empty() {
            row.status = notes.join("; ");
        }
        row
    });
    Ok(SolveTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupRow {
    pub p: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub data_scale: Option<f64>,
    pub report: Option<BlowupReport>,
    pub monitor: Option<MonitorReport>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupTable {
    pub rows: Vec<BlowupRow>,
}

impl BlowupTable {
    /// Per-cell trace file stem.
    pub fn trace_stem(row: &BlowupRow) -> String {
        format!(
            "trace_{}",
            cell_dir(&Cell {
                p: row.p,
                epsilon: row.epsilon,
                gamma: row.gamma
            })
        )
    }
}

impl Report for BlowupTable {
    const KIND: &'static str = "blowup";

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "p,epsilon,gamma,data_scale,classification,termination,t_star,t_end,fit_residual,accepted_steps,ap_monitor,ap_crossing,status"
        )?;
        for r in &self.rows {
            let b = r.report.as_ref();
            let m = r.monitor.as_ref();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_num(r.p),
                csv_num(r.epsilon),
                csv_num(r.gamma),
                csv_opt(r.data_scale),
                b.map(|b| snake(&b.classification)).unwrap_or_default(),
                b.map(|b| snake(&b.termination)).unwrap_or_default(),
                csv_opt(b.and_then(|b| b.t_star)),
                csv_opt(b.map(|b| b.t_end)),
                csv_opt(b.and_then(|b| b.fit.map(|f| f.residual))),
                b.map(|b| b.accepted_steps.to_string()).unwrap_or_default(),
                m.map(|m| snake(&m.verdict)).unwrap_or_default(),
                csv_opt(m.and_then(|m| m.crossing_time)),
                csv_text(&r.status)
            )?;
        }
        Ok(())
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Direct integration and the A_p monitor for every cell.
pub fn run_blowup(cfg: &ExperimentConfig) -> Result<BlowupTable> {
    let ctx = Context::new(cfg)?;
    let cells = ctx.cells();
    let rows = par::map_collect(&cells, |cell| {
        let mut row = BlowupRow {
            p: cell.p,
            epsilon: cell.epsilon,
            gamma: cell.gamma,
            data_scale: None,
            report: None,
            monitor: None,
            status: "ok".into(),
        };
        let mut run = || -> Result<()> {
            let nl = ctx.nonlinearity(cell.p)?;
            let (scale, u0) = ctx.data(cell, &nl)?;
            row.data_scale = Some(scale);
            row.report = Some(integrate_nonlinear(
                &ctx.semigroup,
                &u0,
                &nl,
                &cfg.controls.integration(),
            )?);
            if nl.k2.is_some() {
                row.monitor = Some(ap_monitor(&ctx.semigroup, &u0, &nl, &cfg.controls.probe_times())?);
            }
            Ok(())
        };
        if let Err(e) = run() {
            row.status = e.to_string();
        }
        row
    });
    Ok(BlowupTable { rows })
}
