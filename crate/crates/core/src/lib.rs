//! Causal sparse attention for multi-reference conditioning of a diffusion
//! transformer, with exact cost accounting, a reference KV-cache and a
//! desk-scale benchmarking harness.

pub mod attention;
pub mod bench;
pub mod dataprep;
pub mod error;
pub mod pipeline;
pub mod posenc;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
