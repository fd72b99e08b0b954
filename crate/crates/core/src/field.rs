use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{Boundary, GroupKind, GroupModel};
use crate::par;

/// JSON sidecar describing a flat little-endian `f64` field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub kind: GroupKind,
    pub shape: Vec<usize>,
    pub extent: Vec<f64>,
    pub spacing: Vec<f64>,
    pub boundary: Vec<Boundary>,
    pub time: Option<f64>,
    pub dtype: String,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// A sampled function on the lattice of a [`GroupModel`], carrying Haar weights
/// through the model's cell volume.
#[derive(Debug, Clone)]
pub struct GridField {
    model: Arc<GroupModel>,
    values: Vec<f64>,
    /// Diffusion time this field corresponds to, when meaningful.
    pub time: Option<f64>,
}

impl GridField {
    pub fn new(model: Arc<GroupModel>, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.len() {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self {
            model,
            values,
            time: None,
        })
    }

    pub fn zeros(model: &Arc<GroupModel>) -> Self {
        Self {
            values: vec![0.0; model.len()],
            model: Arc::clone(model),
            time: None,
        }
    }

    pub fn constant(model: &Arc<GroupModel>, c: f64) -> Self {
        Self {
            values: vec![c; model.len()],
            model: Arc::clone(model),
            time: None,
        }
    }

    /// Discrete delta of unit mass at the identity.
    pub fn delta(model: &Arc<GroupModel>) -> Self {
        let mut f = Self::zeros(model);
        f.values[model.origin_index()] = 1.0 / model.cell_volume();
        f
    }

    /// Sample `f` at every lattice point's coordinates.
    pub fn from_fn<F>(model: &Arc<GroupModel>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let n = model.ndim();
        let mut values = vec![0.0; model.len()];
        par::fill(&mut values, |i| {
            let c = model.coords_of(i);
            f(&c[..n])
        });
        Self {
            values,
            model: Arc::clone(model),
            time: None,
        }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_lattice(&self, other: &GridField) -> bool {
        Arc::ptr_eq(&self.model, &other.model) || *self.model == *other.model
    }

    pub fn check_same_lattice(&self, other: &GridField) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch)
        }
    }

    /// Haar-weighted ℓ¹ sum.
    pub fn mass(&self) -> f64 {
        par::sum_by(self.values.len(), |i| self.values[i].abs()) * self.model.cell_volume()
    }

    /// Haar-weighted sum of values (signed).
    pub fn integral(&self) -> f64 {
        par::sum(&self.values) * self.model.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        par::max_by(self.values.len(), |i| self.values[i].abs()).max(0.0)
    }

    pub fn max_value(&self) -> f64 {
        par::max_by(self.values.len(), |i| self.values[i])
    }

    pub fn min_value(&self) -> f64 {
        par::min_by(self.values.len(), |i| self.values[i])
    }

    /// Nonnegative up to `1e-12·sup`.
    pub fn is_nonnegative(&self) -> bool {
        self.min_value() >= -1e-12 * self.sup_norm()
    }

    pub fn require_nonnegative(&self) -> Result<()> {
        if self.is_nonnegative() {
            Ok(())
        } else {
            Err(Error::NegativeData {
                min: self.min_value(),
            })
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn map<F: Fn(f64) -> f64 + Sync + Send>(&self, f: F) -> Self {
        let mut out = self.clone();
        par::update(&mut out.values, |_, v| f(v));
        out
    }

    /// `q`-norm with Haar weights.
    pub fn lq_norm(&self, q: f64) -> f64 {
        (par::sum_by(self.values.len(), |i| self.values[i].abs().powf(q)) * self.model.cell_volume())
            .powf(1.0 / q)
    }

    /// Write `<path>` (raw `f64` little-endian, row-major, last axis fastest)
    /// and the JSON sidecar next to it.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let m = &self.model;
        let side = FieldSidecar {
            kind: m.kind,
            shape: m.shape(),
            extent: m.axes.iter().map(|a| a.extent()).collect(),
            spacing: m.axes.iter().map(|a| a.spacing).collect(),
            boundary: m.axes.iter().map(|a| a.boundary).collect(),
            time: self.time,
            dtype: "f64le".into(),
        };
        std::fs::write(sidecar_path(path), crate::report::to_json(&side)?)?;
        Ok(())
    }

    /// Read a dump written by [`GridField::write_binary`] onto `model`; the
    /// sidecar must describe the same lattice.
    pub fn read_binary(model: &Arc<GroupModel>, path: &Path) -> Result<Self> {
        let side: FieldSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if side.kind != model.kind || side.shape != model.shape() || side.dtype != "f64le" {
            return Err(Error::ShapeMismatch);
        }
        let bytes = std::fs::read(path)?;
        if bytes.len() != 8 * model.len() {
            return Err(Error::ShapeMismatch);
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut f = Self::new(Arc::clone(model), values)?;
        f.time = side.time;
        Ok(f)
    }

    /// `max |self − other|`.
    pub fn sup_distance(&self, other: &GridField) -> f64 {
        par::max_by(self.values.len(), |i| (self.values[i] - other.values[i]).abs()).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, GroupKind, GroupSpec};
    use proptest::prelude::*;

    fn model() -> Arc<GroupModel> {
        Arc::new(make_group(&GroupSpec::new(GroupKind::Torus, vec![4.0], vec![16])).unwrap())
    }

    #[test]
    fn delta_has_unit_mass() {
        let d = GridField::delta(&model());
        assert!((d.mass() - 1.0).abs() < 1e-15);
        assert_eq!(d.sup_norm(), 4.0);
    }

    #[test]
    fn shape_checked() {
        assert!(matches!(GridField::new(model(), vec![0.0; 3]), Err(Error::ShapeMismatch)));
    }

    #[test]
    fn negative_data_detected() {
        let mut f = GridField::constant(&model(), 1.0);
        f.values_mut()[3] = -0.5;
        assert!(matches!(f.require_nonnegative(), Err(Error::NegativeData { .. })));
        f.values_mut()[3] = -1e-14;
        assert!(f.require_nonnegative().is_ok());
    }

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        let f = GridField::from_fn(&model(), |c| c[0].cos() + 2.0).with_time(0.25);
        f.write_binary(&path).unwrap();
        let g = GridField::read_binary(&model(), &path).unwrap();
        assert_eq!(g.values(), f.values());
        assert_eq!(g.time, Some(0.25));
        let other = Arc::new(make_group(&GroupSpec::new(GroupKind::Torus, vec![4.0], vec![32])).unwrap());
        assert!(matches!(GridField::read_binary(&other, &path), Err(Error::ShapeMismatch)));
    }

    proptest! {
        #[test]
        fn mass_is_homogeneous(vals in proptest::collection::vec(0.0f64..10.0, 16), alpha in 0.0f64..100.0) {
            let f = GridField::new(model(), vals).unwrap();
            let lhs = f.scaled(alpha).mass();
            let rhs = alpha * f.mass();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }
}
