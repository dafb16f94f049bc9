//! Ray-based multi-camera 3D detection building blocks: geometry, depth
//! discretization, lift-splat view transform, radial query initialization,
//! ray sampling, assignment, and a synthetic scene simulator for evaluation.

pub mod config;
pub mod depth;
pub mod error;
pub mod geometry;
pub mod lift_splat;
pub mod matching;
pub mod pipeline;
pub mod query;
pub mod sampling;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
