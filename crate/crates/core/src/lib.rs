//! Normative modeling with multimodal variational autoencoders.
//!
//! Modality-specific encoders produce diagonal-Gaussian posteriors that are
//! fused into a joint latent posterior (PoE, MoE, gPoE or MoPoE). A model
//! trained on healthy controls is then used to score every subject by how far
//! its joint latent position and its reconstruction errors deviate from the
//! control distribution.

pub mod aggregation;
pub mod distributions;
pub mod error;
pub mod deviation;
pub mod evaluation;
pub mod model;
pub mod numeric;
pub mod stats;
pub mod synthdata;

pub use error::{Error, Result};
