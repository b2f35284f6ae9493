//! Category-level object pose annotation from multi-view silhouettes.
//!
//! The pipeline takes per-frame pose hypotheses for one object seen from a
//! set of cameras, refines them jointly against the observed masks while
//! pulling their world-frame lifts toward agreement, and keeps the frames
//! that agree with the consensus.

pub mod consensus;
pub mod error;
pub mod geom;
pub mod lattice;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod protocol;
pub mod scene;
pub mod silhouette;

pub use error::{Error, ErrorClass, Result};
