//! One-shot cross-domain detection adaptation at desk scale.
//!
//! Pipeline: synthetic benchmark generation, a compact two-stage detector
//! with a rotation self-supervision head, multi-task and meta-learning
//! pretraining, per-image test-time adaptation, and mAP / error-type
//! evaluation. Everything runs on CPU in f64 with hand-written gradients.

pub mod adapt;
pub mod detcore;
pub mod error;
pub mod evalkit;
pub mod geom;
pub mod kv;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod rotself;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
