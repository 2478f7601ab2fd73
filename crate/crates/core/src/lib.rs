//! Context-based active speaker detection fused with face-voice association
//! through a gated bimodal unit, at desk scale.
//!
//! The crate provides the full pipeline: a reverse-mode autodiff tape, the
//! layers and fusion unit, context-tensor assembly, the wired model,
//! mini-batch training with Adam and step decay, ranking metrics, per-entry
//! gate-contribution analysis, and a deterministic synthetic-data generator
//! standing in for the pretrained encoders.

pub mod battery;
pub mod context;
pub mod contribution;
pub mod data;
pub mod gbu;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod provider;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use model::{forward, EntryRef, FavoaParams, ForwardTrace, ModelConfig};
pub use tensor::{Tensor, TensorError};
