//! Multi-task image generation with a single flow-matching diffusion
//! transformer. Visual conditions (input image and mask) are concatenated
//! with the noisy latent along the channel axis, tasks are selected by a
//! leading prompt token, and external features replace placeholder prompt
//! rows. Everything is trained and checked on a synthetic shapes world with
//! exact programmatic oracles.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the working precision.

pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub mod forge;
pub mod grid;
pub mod imageio;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod text;
pub mod train;

pub use codec::{resize_mask, Codec};
pub use error::{Error, Result};
pub use flow::{GuidanceScales, SampleSpec, VelocityModel};
pub use forge::{TaskKind, TaskSample};
pub use grid::{ConditionedLatent, Grid, ImageTensor, Latent, LatentMask, MaskImage, NoisyLatent, VelocityField};
pub use model::{ConditioningMode, Mmdit, ModelConfig, Params, SizeTag};
pub use scalar::Scalar;
pub use text::{PromptEmbeddings, Vocabulary};

/// Single-precision weights, the training default.
pub type ParamsF32 = Params<f32>;
/// Double-precision weights for gradient checks and exact oracles.
pub type ParamsF64 = Params<f64>;
pub type LatentF32 = Latent<f32>;
pub type LatentF64 = Latent<f64>;
pub type PromptF32 = PromptEmbeddings<f32>;
pub type PromptF64 = PromptEmbeddings<f64>;
