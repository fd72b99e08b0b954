//! Numerical laboratory for the Fujita dichotomy of `u_t = Lu + f(u)` on
//! unimodular Lie groups: discrete heat semigroups, the Picard mild-solution
//! construction with its barrier certificate, blow-up detection and
//! certificate calculators for abstract volume-growth profiles.

pub mod blowup;
pub mod error;
pub mod field;
pub mod group;
pub mod harness;
pub mod heat;
pub mod mild;
pub mod par;
pub mod report;

pub use error::{Error, Result};
pub use field::GridField;
pub use group::{make_group, GroupKind, GroupModel, GroupSpec};
