//! Aspect-level sentiment classification with syntax-masked attention fused
//! with entropic optimal-transport attention.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod dropout;
pub mod error;
pub mod fusion;
pub mod ingest;
pub mod ot;
pub mod report;
pub mod sgaa;
pub mod syngraph;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
