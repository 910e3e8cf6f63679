//! Differentiable layers, the denoiser network, and its optimizer.

pub mod model;
pub mod ops;
pub mod optim;

pub use model::{Batch, Denoiser, DenoiserConfig, ForwardCache};
pub use ops::{embed_time, layer_norm};
pub use optim::{Adam, Ema};
