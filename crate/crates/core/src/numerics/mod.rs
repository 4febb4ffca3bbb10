//! Dense linear algebra, the feed-forward denoiser and its optimizer.

mod denoiser;
mod matrix;
mod optim;
mod scalar;

pub use denoiser::{time_embedding, DenoiserConfig, DenoiserNet, ForwardCache, Gradients, Linear};
pub use matrix::{cosine, dot, norm, solve, DenseMatrix};
pub use optim::{clip_grad_norm, global_norm, warmup_scale, AdamWConfig, AdamWState, ParamTensors};
pub use scalar::Scalar;
