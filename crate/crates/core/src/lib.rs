//! Vulnerability analysis for C/C++ functions.
//!
//! The pipeline extracts functions from source files, flags vulnerable ones
//! with a binary detector, ranks suspicious lines by self-attention mass,
//! classifies the weakness (CWE-ID and CWE-Type) with a dual-token multi-task
//! transformer and estimates a CVSS v3.1 severity score.
//!
//! The multi-task classifier is trained with the two-task multiple gradient
//! descent algorithm (see [`moo`]): task heads take plain gradient steps and
//! the shared encoder follows the min-norm convex combination of the two task
//! gradients.

pub mod corpus;
pub mod engine;
pub mod extractor;
pub mod metrics;
pub mod model;
pub mod moo;
pub mod tokenizer;
pub mod trainer;

mod linalg;
mod par;

pub use corpus::{LabelRegistry, VulnRecord};
pub use engine::{Diagnostic, Engine, SeverityBand};
pub use model::{ModelConfig, ModelParams};
pub use moo::{min_norm_solver, DescentWeights};
pub use tokenizer::{TokenSequence, Vocab};

/// Version string reported by the service and written into checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
