//! Adaptive-depth graph neural networks.
//!
//! Node-level depth-benefit theory, a CSBM generator with Monte-Carlo
//! oracles for that theory, a small reverse-mode tensor engine, GCN and
//! mean-aggregator backbones, and the adaptive-depth model that assigns each
//! node its own stopping depth.

pub mod adaptive;
pub mod backbones;
pub mod csbm;
pub mod error;
pub mod graph;
pub mod harness;
pub mod ndiff;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use graph::{FeatureMatrix, Graph, LabelVector, NodeProfile, Role, SplitMask};
