//! Noisy-label detection with dual positive/negative prompts in a joint
//! image/text embedding space, followed by re-adaptation on the selected
//! clean subset.
//!
//! Module map:
//!
//! * [`kernels`]: cosine similarity, softmax, seeded random streams.
//! * [`datagen`]: labeled embedding datasets, file formats, label noise.
//! * [`detector`]: prompt learning and clean-sample selection.
//! * [`adapt`]: adapters, SGD, cross-entropy and clean-subset training.
//! * [`baselines`]: label-match, small-loss and Gaussian-mixture selectors.
//! * [`harness`]: metrics, experiment pipeline, reports.

pub mod adapt;
pub mod baselines;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod harness;
pub mod kernels;

pub use error::{DeftError, Result};
