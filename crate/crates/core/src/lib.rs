//! Self-supervised speech enhancement by bootstrapped remixing.
//!
//! A teacher separator splits in-domain mixtures into speech and noise
//! estimates; the noise estimates are permuted across the batch and remixed
//! with the speech estimates; a student is trained on those remixed
//! mixtures with the permuted estimates as targets, and the teacher is
//! periodically refreshed from the student.
//!
//! Numeric modules are generic over [`Scalar`]; the aliases below fix the
//! `f64` instantiation used for training.

pub mod analysis;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod net;
pub mod scalar;
pub mod signal;
pub mod trainers;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type WaveBatch = signal::WaveBatch<f64>;
pub type SourceEstimates = signal::SourceEstimates<f64>;
pub type ModelState = net::ModelState<f64>;
pub type ForwardCache = net::ForwardCache<f64>;
pub type SiSdrResult = metrics::SiSdrResult<f64>;
