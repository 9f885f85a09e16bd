//! Self-attention aligner (SAA): a from-scratch sequence-transduction
//! toolkit. Self-attention encoder/decoder with proximity bias, a
//! blank-removal alignment loss, joint language-model fusion, and
//! chunk-hopping streaming encoding, all on a minimal f64 reverse-mode
//! autodiff tensor core.
//!
//! See the `examples/` directory for one runnable program per capability
//! and the `saa` binary for the command-line surface.

pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod san;
pub mod tensor;
pub mod train;

pub use error::{Result, SaaError};
pub use rng::SaaRng;
pub use tensor::Tensor;
