//! Convoluted white-noise field models on lattices and in momentum space.

pub mod error;
pub mod field;
pub mod green;
pub mod hssc;
pub mod lattice;
pub mod levy;
pub mod partition;
pub mod quad;
pub mod quaternion;
pub mod schwinger;
pub mod stats;
pub mod testfn;
pub mod wightman;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
