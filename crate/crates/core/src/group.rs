//! Concrete group geometries and the volume-growth profile fitted to them.
//!
//! Three lattices are supported: a Euclidean box standing in for ℝⁿ, a flat
//! torus, and the first Heisenberg group ℍ¹ with the frame
//! `X₁ = ∂x − (y/2)∂z`, `X₂ = ∂y + (x/2)∂z`. Every axis is uniform; lattice
//! index `i` sits at coordinate `i·h − (N/2)·h`, so the identity is the point
//! with index `N/2` on every axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat::KernelCurve;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Euclidean,
    Torus,
    Heisenberg1,
}

impl GroupKind {
    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Euclidean => "euclidean",
            GroupKind::Torus => "torus",
            GroupKind::Heisenberg1 => "heisenberg1",
        }
    }
}

impl std::str::FromStr for GroupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(GroupKind::Euclidean),
            "torus" => Ok(GroupKind::Torus),
            "heisenberg1" => Ok(GroupKind::Heisenberg1),
            other => Err(Error::UnsupportedKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Dirichlet,
}

/// Homogeneous norm used as the distance from the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gauge {
    /// Euclidean norm of the shortest periodic representative.
    Euclidean,
    /// `((x²+y²)² + 16z²)^{1/4}` on ℍ¹.
    Koranyi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "growth", content = "value")]
pub enum GlobalDimension {
    Polynomial(u32),
    Exponential,
}

/// Group kind plus lattice parameters, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub kind: GroupKind,
    /// Per-axis length `Lᵢ = Nᵢ·hᵢ`.
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Vec<Boundary>>,
}

impl GroupSpec {
    pub fn new(kind: GroupKind, extent: Vec<f64>, points: Vec<usize>) -> Self {
        Self {
            kind,
            extent,
            points,
            boundary: None,
        }
    }

    pub fn with_boundary(mut self, boundary: Vec<Boundary>) -> Self {
        self.boundary = Some(boundary);
        self
    }

    /// Cube of side `extent` with `points` per axis.
    pub fn cube(kind: GroupKind, n: usize, extent: f64, points: usize) -> Self {
        Self::new(kind, vec![extent; n], vec![points; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub points: usize,
    pub spacing: f64,
    pub boundary: Boundary,
}

impl Axis {
    pub fn extent(&self) -> f64 {
        self.points as f64 * self.spacing
    }

    pub fn offset(&self) -> f64 {
        (self.points / 2) as f64 * self.spacing
    }

    pub fn coord(&self, index: usize) -> f64 {
        index as f64 * self.spacing - self.offset()
    }

    /// Shortest representative for periodic axes, identity otherwise.
    pub fn wrap(&self, x: f64) -> f64 {
        match self.boundary {
            Boundary::Dirichlet => x,
            Boundary::Periodic => {
                let l = self.extent();
                x - l * (x / l).round()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticePoint {
    pub index: [usize; MAX_DIM],
    pub coords: [f64; MAX_DIM],
}

/// A validated lattice model; immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub kind: GroupKind,
    pub axes: Vec<Axis>,
    pub local_dim: u32,
    pub global_dim: GlobalDimension,
    pub gauge: Gauge,
}

pub fn make_group(spec: &GroupSpec) -> Result<GroupModel> {
    GroupModel::new(spec)
}

impl GroupModel {
    pub fn new(spec: &GroupSpec) -> Result<Self> {
        let n = spec.extent.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidLattice(format!(
                "dimension {n} outside 1..={MAX_DIM}"
            )));
        }
        if spec.points.len() != n {
            return Err(Error::InvalidLattice(format!(
                "{} extents but {} point counts",
                n,
                spec.points.len()
            )));
        }
        if spec.kind == GroupKind::Heisenberg1 && n != 3 {
            return Err(Error::InvalidLattice(format!(
                "heisenberg1 needs 3 axes, got {n}"
            )));
        }
        let boundary = match &spec.boundary {
            Some(b) if b.len() != n => {
                return Err(Error::InvalidLattice(format!(
                    "{} boundary rules for {} axes",
                    b.len(),
                    n
                )))
            }
            Some(b) => b.clone(),
            None => match spec.kind {
                GroupKind::Heisenberg1 => {
                    vec![Boundary::Dirichlet, Boundary::Dirichlet, Boundary::Periodic]
                }
                _ => vec![Boundary::Periodic; n],
            },
        };
        if spec.kind == GroupKind::Torus && boundary.iter().any(|&b| b != Boundary::Periodic) {
            return Err(Error::InvalidLattice("torus axes must be periodic".into()));
        }
        let mut axes = Vec::with_capacity(n);
        for (k, ((&l, &pts), &b)) in spec.extent.iter().zip(&spec.points).zip(&boundary).enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidLattice(format!(
                    "axis {k}: extent {l} must be positive"
                )));
            }
            if pts < 8 {
                return Err(Error::InvalidLattice(format!(
                    "axis {k}: {pts} points, need at least 8"
                )));
            }
            if b == Boundary::Periodic && pts % 2 != 0 {
                return Err(Error::InvalidLattice(format!(
                    "axis {k}: periodic axis needs an even point count, got {pts}"
                )));
            }
            axes.push(Axis {
                points: pts,
                spacing: l / pts as f64,
                boundary: b,
            });
        }
        let (local_dim, global_dim, gauge) = match spec.kind {
            GroupKind::Euclidean => (n as u32, GlobalDimension::Polynomial(n as u32), Gauge::Euclidean),
            GroupKind::Torus => (n as u32, GlobalDimension::Polynomial(0), Gauge::Euclidean),
            GroupKind::Heisenberg1 => (4, GlobalDimension::Polynomial(4), Gauge::Koranyi),
        };
        Ok(Self {
            kind: spec.kind,
            axes,
            local_dim,
            global_dim,
            gauge,
        })
    }

    pub fn spec(&self) -> GroupSpec {
        GroupSpec {
            kind: self.kind,
            extent: self.axes.iter().map(Axis::extent).collect(),
            points: self.axes.iter().map(|a| a.points).collect(),
            boundary: Some(self.axes.iter().map(|a| a.boundary).collect()),
        }
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Haar weight of one lattice cell, `∏ hᵢ`.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing).product()
    }

    /// `∏ Nᵢ·hᵢ`.
    pub fn total_mass(&self) -> f64 {
        self.axes.iter().map(Axis::extent).product()
    }

    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing).fold(0.0, f64::max)
    }

    pub fn is_fully_periodic(&self) -> bool {
        self.axes.iter().all(|a| a.boundary == Boundary::Periodic)
    }

    /// Global dimension `D` for polynomial growth.
    pub fn global_dimension(&self) -> u32 {
        match self.global_dim {
            GlobalDimension::Polynomial(d) => d,
            GlobalDimension::Exponential => u32::MAX,
        }
    }

    /// `p_F = 1 + 2/D`; infinite when `D = 0`.
    pub fn fujita_exponent(&self) -> f64 {
        fujita_exponent(self.global_dimension())
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0; MAX_DIM];
        let mut acc = 1;
        for k in (0..self.ndim()).rev() {
            s[k] = acc;
            acc *= self.axes[k].points;
        }
        s
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        let s = self.strides();
        index.iter().zip(s.iter()).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for k in (0..self.ndim()).rev() {
            let n = self.axes[k].points;
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn coords_of(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut c = [0.0; MAX_DIM];
        for (k, axis) in self.axes.iter().enumerate() {
            c[k] = axis.coord(idx[k]);
        }
        c
    }

    pub fn point(&self, index: &[usize]) -> Result<LatticePoint> {
        if index.len() != self.ndim() {
            return Err(Error::InvalidLattice(format!(
                "index has {} components for a {}-axis lattice",
                index.len(),
                self.ndim()
            )));
        }
        let mut p = LatticePoint {
            index: [0; MAX_DIM],
            coords: [0.0; MAX_DIM],
        };
        for (k, (&i, axis)) in index.iter().zip(&self.axes).enumerate() {
            if i >= axis.points {
                return Err(Error::InvalidLattice(format!(
                    "index {i} out of bounds on axis {k}"
                )));
            }
            p.index[k] = i;
            p.coords[k] = axis.coord(i);
        }
        Ok(p)
    }

    pub fn origin_index(&self) -> usize {
        let idx: Vec<usize> = self.axes.iter().map(|a| a.points / 2).collect();
        self.flat_index(&idx)
    }

    /// Quasi-distance from the identity of an arbitrary coordinate tuple.
    pub fn quasi_norm(&self, coords: &[f64]) -> f64 {
        let mut c = [0.0; MAX_DIM];
        for (k, axis) in self.axes.iter().enumerate() {
            c[k] = axis.wrap(coords[k]);
        }
        match self.gauge {
            Gauge::Euclidean => c[..self.ndim()].iter().map(|v| v * v).sum::<f64>().sqrt(),
            Gauge::Koranyi => koranyi(c[0], c[1], c[2]),
        }
    }

    pub fn quasi_distance(&self, x: &LatticePoint) -> f64 {
        self.quasi_norm(&x.coords[..self.ndim()])
    }

    pub fn quasi_distance_flat(&self, flat: usize) -> f64 {
        let c = self.coords_of(flat);
        self.quasi_norm(&c[..self.ndim()])
    }

    /// Largest radius whose ball stays inside a non-periodic lattice.
    pub fn max_ball_radius(&self) -> f64 {
        if self.kind == GroupKind::Torus {
            return f64::INFINITY;
        }
        let half = |a: &Axis| (a.points / 2) as f64 * a.spacing;
        match self.kind {
            GroupKind::Heisenberg1 => {
                let rxy = half(&self.axes[0]).min(half(&self.axes[1]));
                // |z| < r²/4 inside the Korányi ball
                let rz = 2.0 * half(&self.axes[2]).sqrt();
                rxy.min(rz)
            }
            _ => self.axes.iter().map(half).fold(f64::INFINITY, f64::min),
        }
    }

    /// Haar-weighted count of lattice points with quasi-distance `< r`.
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::InvalidLattice(format!("radius {r} must be positive")));
        }
        let limit = self.max_ball_radius();
        if r > limit {
            return Err(Error::BallExceedsDomain { radius: r, limit });
        }
        let count = crate::par::sum_by(self.len(), |i| {
            if self.quasi_distance_flat(i) < r {
                1.0
            } else {
                0.0
            }
        });
        Ok(count * self.cell_volume())
    }

    /// Continuum ball volume `V(r)` of the modelled group, used as the
    /// prefactor scale in Gaussian envelopes. The torus saturates at its
    /// total volume.
    pub fn model_ball_volume(&self, r: f64) -> f64 {
        let n = self.ndim() as i32;
        match self.kind {
            GroupKind::Euclidean => unit_ball_volume(n) * r.powi(n),
            GroupKind::Torus => (unit_ball_volume(n) * r.powi(n)).min(self.total_mass()),
            // vol{(x²+y²)² + 16z² < 1} = π²/8
            GroupKind::Heisenberg1 => std::f64::consts::PI.powi(2) / 8.0 * r.powi(4),
        }
    }
}

pub fn fujita_exponent(global_dim: u32) -> f64 {
    if global_dim == 0 {
        f64::INFINITY
    } else {
        1.0 + 2.0 / global_dim as f64
    }
}

pub fn koranyi(x: f64, y: f64, z: f64) -> f64 {
    let r2 = x * x + y * y;
    (r2 * r2 + 16.0 * z * z).sqrt().sqrt()
}

/// Group law of ℍ¹ matching the frame `X₁ = ∂x − (y/2)∂z`, `X₂ = ∂y + (x/2)∂z`.
pub fn heisenberg_product(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[0] + b[0],
        a[1] + b[1],
        a[2] + b[2] + 0.5 * (a[0] * b[1] - a[1] * b[0]),
    ]
}

pub fn heisenberg_inverse(a: [f64; 3]) -> [f64; 3] {
    [-a[0], -a[1], -a[2]]
}

fn unit_ball_volume(n: i32) -> f64 {
    use std::f64::consts::PI;
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => unreachable!("lattices have at most 3 axes"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "growth")]
pub enum Growth {
    /// `‖h_t‖_∞ ≍ t^{-b/2}` for `t < 1` and `t^{-a/2}` for `t ≥ 1`.
    Polynomial { a: f64, b: f64 },
    /// Exponential volume growth with local dimension `d`.
    Exponential { d: f64 },
}

/// Multiplicative envelope constants for `‖h_t‖_∞` against the fitted powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    pub small_lower: f64,
    pub small_upper: f64,
    pub large_lower: f64,
    pub large_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    pub growth: Growth,
    pub constants: EnvelopeConstants,
    /// `(t, ‖h_t‖_∞)` samples behind a fitted profile; empty for abstract ones.
    #[serde(default)]
    pub samples: Vec<(f64, f64)>,
}

impl VolumeProfile {
    pub fn polynomial(a: f64, b: f64, upper: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0 && b.is_finite() && b >= 0.0) {
            return Err(Error::Validation(format!(
                "profile exponents must be finite and nonnegative (a={a}, b={b})"
            )));
        }
        Ok(Self {
            growth: Growth::Polynomial { a, b },
            constants: EnvelopeConstants {
                small_lower: upper,
                small_upper: upper,
                large_lower: upper,
                large_upper: upper,
            },
            samples: Vec::new(),
        })
    }

    pub fn exponential(d: f64, upper: f64) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Validation(format!("local dimension {d} must be positive")));
        }
        Ok(Self {
            growth: Growth::Exponential { d },
            constants: EnvelopeConstants {
                small_lower: upper,
                small_upper: upper,
                large_lower: upper,
                large_upper: upper,
            },
            samples: Vec::new(),
        })
    }

    /// Exact Gaussian profile of ℝⁿ: `‖h_t‖_∞ = (4πt)^{-n/2}`.
    pub fn euclidean(n: u32) -> Self {
        let c = (4.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0);
        Self {
            growth: Growth::Polynomial {
                a: n as f64,
                b: n as f64,
            },
            constants: EnvelopeConstants {
                small_lower: c,
                small_upper: c,
                large_lower: c,
                large_upper: c,
            },
            samples: Vec::new(),
        }
    }

    /// Smallest `C` with `‖h_t‖_∞ ≤ C t^{-exponent/2}` on the samples with
    /// `t ≥ t_from`; falls back to the stored large-time constant.
    pub fn upper_constant(&self, exponent: f64, t_from: f64) -> f64 {
        let fitted = self
            .samples
            .iter()
            .filter(|(t, _)| *t >= t_from)
            .map(|(t, s)| s * t.powf(exponent / 2.0))
            .fold(f64::NEG_INFINITY, f64::max);
        if fitted.is_finite() {
            fitted
        } else {
            self.constants.large_upper
        }
    }
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Log-log fit of the sup-norm curve. The small-time exponent uses the first
/// decade of samples below `t = 1`, the large-time exponent the last decade
/// above it, so that each reflects its asymptotic regime.
pub fn fit_profile(g: &GroupModel, curve: &KernelCurve) -> Result<VolumeProfile> {
    let _ = g;
    let mut pts: Vec<(f64, f64)> = curve.samples.iter().map(|s| (s.t, s.sup_norm)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 8 {
        return Err(Error::InsufficientSamples(format!(
            "{} samples, need at least 8",
            pts.len()
        )));
    }
    let t_min = pts[0].0;
    let t_max = pts[pts.len() - 1].0;
    if !(t_min > 0.0 && t_min <= 0.1 + 1e-12 && t_max >= 10.0 - 1e-12) {
        return Err(Error::InsufficientSamples(format!(
            "samples span [{t_min}, {t_max}], need a decade on each side of t = 1"
        )));
    }
    for w in pts.windows(2) {
        if !(w[1].1 > 0.0) || w[1].1 > w[0].1 * (1.0 + 1e-9) {
            return Err(Error::NonMonotoneCurve { t: w[1].0 });
        }
    }

    let fit_window = |lo: f64, hi: f64| -> Result<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts
            .iter()
            .filter(|(t, _)| *t >= lo * (1.0 - 1e-12) && *t <= hi * (1.0 + 1e-12))
            .map(|(t, s)| (t.ln(), s.ln()))
            .unzip();
        if xs.len() < 3 {
            return Err(Error::InsufficientSamples(format!(
                "only {} samples in [{lo}, {hi}]",
                xs.len()
            )));
        }
        Ok(-2.0 * lsq_slope(&xs, &ys))
    };
    let b = fit_window(t_min, (10.0 * t_min).min(1.0))?.max(0.0);
    let a = fit_window((t_max / 10.0).max(1.0), t_max)?.max(0.0);

    let envelope = |exp: f64, small: bool| {
        let vals: Vec<f64> = pts
            .iter()
            .filter(|(t, _)| (*t < 1.0) == small)
            .map(|(t, s)| s * t.powf(exp / 2.0))
            .collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (small_lower, small_upper) = envelope(b, true);
    let (large_lower, large_upper) = envelope(a, false);
    Ok(VolumeProfile {
        growth: Growth::Polynomial { a, b },
        constants: EnvelopeConstants {
            small_lower,
            small_upper,
            large_lower,
            large_upper,
        },
        samples: pts,
    })
}
