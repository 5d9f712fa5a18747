//! Convolution-free transformers over 3D volumes: block and patch
//! tokenization, vanilla and factorized self-attention, multiple-instance
//! aggregation, a full training recipe and hierarchical attention rollout.
//!
//! The numeric core is a small reverse-mode tape in [`tensor`]; the model
//! zoo lives in [`models`], training machinery in [`training`], and the
//! operator-facing commands in [`cli`].

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
