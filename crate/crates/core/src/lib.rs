//! Masked generative click-through-rate modeling with inference-time
//! iterative refinement.
//!
//! Training masks a random fraction of a sample's feature fields and learns to
//! reconstruct them with a sampled softmax over in-batch candidates. Inference
//! starts from the user-side fields only, regenerates the item and cross
//! fields over a few steps, keeps the most confident originals first, scales
//! each kept feature by its confidence, and finally scores the label slot.

pub mod data;
pub mod error;
pub mod eval;
pub mod hash;
pub mod model;
pub mod refine;
pub mod schema;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
