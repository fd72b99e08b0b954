use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blowup::Controls;
use crate::error::{Error, Result};
use crate::group::{make_group, Boundary, GroupKind, GroupModel, GroupSpec};
use crate::heat::Scheme;
use crate::mild::{ExistenceOptions, Nonlinearity, PicardOptions};

use super::Format;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for the randomized property probes.
    #[serde(default)]
    pub seed: u64,
    pub group: GroupSection,
    #[serde(default)]
    pub nonlinearity: NonlinearitySection,
    pub data: DataSection,
    #[serde(default)]
    pub controls: ControlsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#abstract: Option<AbstractSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub kind: GroupKind,
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Vec<Boundary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
}

impl GroupSection {
    pub fn spec(&self) -> GroupSpec {
        GroupSpec {
            kind: self.kind,
            extent: self.extent.clone(),
            points: self.points.clone(),
            boundary: self.boundary.clone(),
        }
    }

    /// The same box with every axis refined `2^level` times.
    pub fn refined(&self, level: u32) -> GroupSection {
        let mut s = self.clone();
        s.points.iter_mut().for_each(|n| *n <<= level);
        s
    }

    pub fn build(&self) -> Result<Arc<GroupModel>> {
        Ok(Arc::new(make_group(&self.spec())?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    #[default]
    Power,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    /// Exponents; the default grid around `p_F` when empty.
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default = "one")]
    pub k1: f64,
    /// Defaults to `k1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default)]
    pub rule: RuleName,
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self {
            p: Vec::new(),
            k1: 1.0,
            k2: None,
            rule: RuleName::Power,
        }
    }
}

impl NonlinearitySection {
    pub fn build(&self, p: f64) -> Result<Nonlinearity> {
        match self.rule {
            RuleName::Power => {
                let k2 = self.k2.unwrap_or(self.k1);
                if k2 == self.k1 {
                    Nonlinearity::power(p, self.k1)
                } else {
                    // k2·u^p sits between the bounds and drives the dynamics
                    let mut nl = Nonlinearity::power(p, k2)?;
                    nl.k1 = Some(self.k1);
                    nl.validate()?;
                    Ok(nl)
                }
            }
            RuleName::Zero => {
                let mut nl = Nonlinearity::zero(p, self.k1)?;
                nl.k2 = self.k2;
                Ok(nl)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `ε·h_γ`.
    Kernel,
    /// `u₀ ≡ ε`.
    Constant,
    /// `ε·u` for a stored field `u`.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonMode {
    #[default]
    Absolute,
    /// `ε` is a fraction of the certified threshold for each `(p, γ)`.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub family: Family,
    pub epsilon: Vec<f64>,
    #[serde(default = "unit_grid")]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSection {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<f64>,
    #[serde(default = "default_dt0")]
    pub dt0: f64,
    #[serde(default = "default_dt_min")]
    pub dt_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_picard_steps")]
    pub picard_steps: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_s_cut")]
    pub s_cut: f64,
    /// Extra runs of blow-up cells on lattices refined `2^level` times.
    #[serde(default)]
    pub refinement_levels: u32,
    #[serde(default = "default_probes")]
    pub monitor_probes: usize,
    /// Random fields per cell for the Jensen positivity probe.
    #[serde(default = "default_jensen")]
    pub jensen_probes: usize,
}

impl Default for ControlsSection {
    fn default() -> Self {
        Self {
            t_max: default_t_max(),
            tol: default_tol(),
            m_max: None,
            dt0: default_dt0(),
            dt_min: default_dt_min(),
            dt_max: None,
            safety: default_safety(),
            picard_steps: default_picard_steps(),
            k_max: default_k_max(),
            s_cut: default_s_cut(),
            refinement_levels: 0,
            monitor_probes: default_probes(),
            jensen_probes: default_jensen(),
        }
    }
}

impl ControlsSection {
    pub fn integration(&self) -> Controls {
        Controls {
            dt0: self.dt0,
            dt_min: self.dt_min,
            m_max: self.m_max,
            t_max: self.t_max,
            safety: self.safety,
            dt_max: self.dt_max,
        }
    }

    pub fn picard(&self) -> PicardOptions {
        PicardOptions {
            horizon: self.t_max,
            steps: self.picard_steps,
            tol: self.tol,
            k_max: self.k_max,
        }
    }

    pub fn existence(&self) -> ExistenceOptions {
        ExistenceOptions::with_s_cut(self.s_cut)
    }

    /// Geometric probe times ending at `t_max`.
    pub fn probe_times(&self) -> Vec<f64> {
        let n = self.monitor_probes.max(1);
        let lo = self.t_max * 1e-3;
        (0..n)
            .map(|k| {
                if n == 1 {
                    self.t_max
                } else {
                    lo * (self.t_max / lo).powf(k as f64 / (n - 1) as f64)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
    /// Snapshot stride for field dumps of `solve`; 0 disables them.
    #[serde(default)]
    pub field_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: Format::Json,
            field_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    #[serde(default = "default_kernel_slack")]
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Polynomial,
    Exponential,
}

/// Abstract volume-growth profile for the closed-form certifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractSection {
    pub profile: ProfileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Heat-kernel constant; fitted from the group when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn unit_grid() -> Vec<f64> {
    vec![1.0]
}
fn default_t_max() -> f64 {
    100.0
}
fn default_tol() -> f64 {
    1e-8
}
fn default_dt0() -> f64 {
    0.01
}
fn default_dt_min() -> f64 {
    1e-12
}
fn default_safety() -> f64 {
    0.1
}
fn default_picard_steps() -> usize {
    1000
}
fn default_k_max() -> usize {
    200
}
fn default_s_cut() -> f64 {
    100.0
}
fn default_probes() -> usize {
    16
}
fn default_jensen() -> usize {
    4
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_kernel_slack() -> f64 {
    2.0
}

/// `{p_F/1.5, 0.9·p_F, p_F, 1.1·p_F, 1.5·p_F}`, dropping entries `≤ 1`.
/// Models without a finite Fujita exponent get `{1.5, 2, 3, 4}`.
pub fn default_p_grid(p_f: f64) -> Vec<f64> {
    if p_f.is_finite() {
        [p_f / 1.5, 0.9 * p_f, p_f, 1.1 * p_f, 1.5 * p_f]
            .into_iter()
            .filter(|p| *p > 1.0)
            .collect()
    } else {
        vec![1.5, 2.0, 3.0, 4.0]
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|c| *c != '\n').count() + 1;
    (line, column)
}

impl ExperimentConfig {
    /// Parse and validate. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        if let (Some(base), Some(file)) = (base, cfg.data.file.as_mut()) {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        cfg.fill_defaults()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn fill_defaults(&mut self) -> Result<()> {
        if self.nonlinearity.p.is_empty() {
            let g = self.group.build()?;
            self.nonlinearity.p = default_p_grid(g.fujita_exponent());
        }
        if self.nonlinearity.k2.is_none() && self.nonlinearity.rule == RuleName::Power {
            self.nonlinearity.k2 = Some(self.nonlinearity.k1);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        let g = self.group.build()?;
        if let Some(s) = self.group.scheme {
            crate::heat::HeatSemigroup::new(&g, s)?;
        }
        let nl = &self.nonlinearity;
        if nl.p.is_empty() {
            return bad("nonlinearity.p is empty");
        }
        for &p in &nl.p {
            nl.build(p)?;
        }
        let d = &self.data;
        if d.epsilon.is_empty() {
            return bad("data.epsilon is empty");
        }
        if d.epsilon.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return bad("data.epsilon entries must be finite and nonnegative");
        }
        if d.gamma.is_empty() {
            return bad("data.gamma is empty");
        }
        if d.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return bad("data.gamma entries must be positive");
        }
        match (d.family, &d.file) {
            (Family::File, None) => return bad("data.family = \"file\" needs data.file"),
            (Family::File, Some(f)) if !f.exists() => {
                return Err(Error::Validation(format!("data file {} does not exist", f.display())))
            }
            (Family::File, Some(f)) => {
                let sidecar = f.with_extension("json");
                if !sidecar.exists() {
                    return Err(Error::Validation(format!(
                        "sidecar {} does not exist",
                        sidecar.display()
                    )));
                }
            }
            _ => {}
        }
        if d.epsilon_mode == EpsilonMode::Threshold && d.family == Family::Constant && g.is_fully_periodic() {
            return bad("threshold epsilon is undefined for constant data on a compact model");
        }
        let c = &self.controls;
        let positive = [
            ("t_max", c.t_max),
            ("tol", c.tol),
            ("dt0", c.dt0),
            ("dt_min", c.dt_min),
            ("safety", c.safety),
            ("s_cut", c.s_cut),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("controls.{name} must be positive")));
            }
        }
        if c.s_cut < 1.0 {
            return bad("controls.s_cut must be at least 1");
        }
        if c.dt_min > c.dt0 {
            return bad("controls.dt_min exceeds controls.dt0");
        }
        if c.dt_max.is_some_and(|m| !(m >= c.dt0)) {
            return bad("controls.dt_max is below controls.dt0");
        }
        if c.m_max.is_some_and(|m| !(m > 0.0)) {
            return bad("controls.m_max must be positive");
        }
        if c.picard_steps == 0 || c.k_max == 0 {
            return bad("controls.picard_steps and controls.k_max must be positive");
        }
        if let Some(k) = &self.kernel {
            if k.times.is_empty() || k.radii.is_empty() {
                return bad("kernel.times and kernel.radii must be nonempty");
            }
            if !(k.slack >= 1.0) {
                return bad("kernel.slack must be at least 1");
            }
        }
        if let Some(a) = &self.r#abstract {
            a.profile()?;
            if a.c.is_some_and(|c| !(c > 0.0)) {
                return bad("abstract.c must be positive");
            }
        }
        Ok(())
    }

    /// Non-fatal remarks, such as a p-grid on one side of `p_F`.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(g) = self.group.build() {
            let pf = g.fujita_exponent();
            if pf.is_finite() {
                let ps = &self.nonlinearity.p;
                let below = ps.iter().any(|p| *p <= pf);
                let above = ps.iter().any(|p| *p > pf);
                if !(below && above) {
                    out.push(format!("p grid does not straddle p_F = {pf}"));
                }
            }
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Write the resolved configuration to `dir/config.resolved.toml`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

impl AbstractSection {
    pub fn profile(&self) -> Result<super::AbstractProfile> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Validation(format!("abstract.{name} is required")))
        };
        let p = match self.profile {
            ProfileKind::Polynomial => {
                let a = need(self.a, "a")?;
                super::AbstractProfile::Polynomial {
                    a,
                    b: self.b.unwrap_or(a),
                }
            }
            ProfileKind::Exponential => super::AbstractProfile::Exponential { d: need(self.d, "d")? },
        };
        p.validate()?;
        Ok(p)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::parse(&text, path.parent())
}
