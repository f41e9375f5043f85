//! Self-supervised anomaly detection for 3D point clouds.
//!
//! The pipeline: procedural defect synthesis ([`synth`]), geometry-aware
//! center sampling ([`gps`]), point-patch masking and embedding ([`patch`]),
//! a compact transformer trained from scratch to reconstruct masked patches
//! ([`model`]), iterative reconstruction plus dense scoring ([`detect`]),
//! and ROC/PRO metrics with an ablation harness ([`eval`]).

pub mod detect;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gps;
pub mod io;
pub mod model;
pub mod patch;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
