//! Hierarchy-aware concept embeddings on the unit hypersphere.
//!
//! The library places taxonomy nodes on the unit sphere with a geodesic
//! triplet objective, regularizes the layout with a kernelized transport
//! field, attaches a von Mises–Fisher containment head, and ranks parent
//! candidates with a radius-gated angular score.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod losses;
pub mod manifold;
pub mod metrics;
pub mod optimizer;
pub mod synthetic;
pub mod taxonomy;
pub mod train;
pub mod vmf;

pub use error::{CoreError, Result};
pub use manifold::{AngularCoords, TangentVector, UnitVector};
