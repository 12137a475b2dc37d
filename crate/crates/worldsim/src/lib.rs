//! Multimodal world model: a semantic conditioner over interleaved text and
//! image patches, a VAE codec for the structural latent, and a conditional
//! latent denoiser, trained with a hand-written reverse-mode tape.

pub mod checkpoint;
pub mod curriculum;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod scoring;
pub mod tape;
pub mod tokenizer;
pub mod train;

pub use diffusion::DiffusionSchedule;
pub use error::{Result, SimError};
pub use model::{LatentState, Model, ModelConfig};
pub use optim::{AdamWConfig, AdamWState, LrSchedule};
pub use params::ParamStore;
pub use tape::{Graph, Tensor};
pub use tokenizer::{Prompt, Segment, Vocab};
