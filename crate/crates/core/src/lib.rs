//! Convex electrode-montage design for transcranial electrical stimulation.
//!
//! The crate provides an analytical four-shell sphere forward model, region
//! and target assembly, the montage-design programs (LCMV-E, CDM,
//! directional maximization, HingePlace, L1L1 and bi-convex magnitude
//! maximization) on top of a conic interior-point solver, KKT certificate
//! checks, equivalence sweeps and focality metrics.

pub mod equivalence;
pub mod error;
pub mod focality;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod regions;
pub mod sphere;
pub mod testbed;
pub mod validate;

pub use error::{Error, Result};
pub use model::*;
