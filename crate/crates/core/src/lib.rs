//! Numerical laboratory for spectral-gap stability of frustration-free chains
//! satisfying local topological quantum order.

pub mod error;
pub mod ffunction;
pub mod interaction;
pub mod lattice;
pub mod linalg;
pub mod ltqo;
pub mod models;
pub mod operator_algebra;
pub mod spectra;
pub mod spectral_flow;
pub mod stability_bounds;

pub use error::{Error, Result};
pub use ffunction::{DerivedFSpec, FFunctionSpec, Weight};
pub use interaction::{EdgeBulkSplit, Interaction, Region};
pub use lattice::{Interval, Site};
pub use linalg::{CMat, C64};
pub use operator_algebra::{Kind, LocalOperator, ParityGrade};
pub use stability_bounds::{BoundConstants, BoundInputs, CSource};
