//! Energy-based domain generalization for time-series classification.
//!
//! The crate covers the full pipeline: synthetic multi-domain data, a 1-D
//! convolutional encoder with domain and label energy heads, the training
//! objective with hand-written gradients, the orthogonality gradient-flow
//! simulator, and evaluation diagnostics. The `eris` binary wraps it in a
//! command-line interface.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod orthoflow;
pub mod train;

pub use error::{Error, Result};
