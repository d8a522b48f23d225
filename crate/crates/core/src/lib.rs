//! Scribble-driven interactive image segmentation over superpixel graphs.
//!
//! Superpixels become nodes of a region adjacency graph; scribbles fix some
//! nodes and the rest are labeled either by an ℓ0 region-fusion heuristic or
//! by a Potts-model integer program, optionally with connectivity
//! constraints enforced through lazy vertex-separator cuts.

pub mod grid;
pub mod labels;
pub mod rag;
pub mod raster;
pub mod scribble;
pub mod potts_heur;
pub mod milp;
pub mod mrf_ilp;
pub mod metrics;
pub mod session;
pub mod synth;
#[cfg(feature = "service")]
pub mod service;

pub use labels::{LabelState, NodeLabel, Rendered};
pub use scribble::{Scribble, ScribbleSet};
pub use session::{Algorithm, Session, SessionConfig, SessionError, SessionInputs};
