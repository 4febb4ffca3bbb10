//! Desk-scale laboratory for continual learning in latent diffusion models.
//!
//! A small conditional denoiser is fine-tuned on a sequence of synthetic
//! concept tasks under five strategies (naive fine-tuning, experience replay,
//! latent replay, similarity-based latent replay and an offline upper bound).
//! Forgetting and diversity are measured with cosine-alignment metrics, the
//! Vendi score and the task forgetting rate, and compared across seeds with
//! Wilcoxon signed-rank tests under Benjamini-Hochberg control.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the project-wide precision to [`Real`].

pub mod continual;
pub mod diffusion;
pub mod error;
pub mod latentspace;
pub mod metrics;
pub mod numerics;
pub mod replay;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use numerics::Scalar;

/// Project-wide compute precision.
pub type Real = f64;

pub type Matrix = numerics::DenseMatrix<Real>;
pub type DenoiserNet = numerics::DenoiserNet<Real>;
pub type Gradients = numerics::Gradients<Real>;
pub type AdamWState = numerics::AdamWState<Real>;
pub type DiffusionSchedule = diffusion::DiffusionSchedule<Real>;
pub type NoisedSample = diffusion::NoisedSample<Real>;
pub type FrozenCodec = latentspace::FrozenCodec<Real>;
pub type FeatureEmbedder = latentspace::FeatureEmbedder<Real>;
pub type ConceptTask = latentspace::ConceptTask<Real>;
pub type TaskSuite = latentspace::TaskSuite<Real>;
pub type ReplayItem = replay::ReplayItem<Real>;
pub type MemoryBuffer = replay::MemoryBuffer<Real>;
pub type TrainOutcome = continual::TrainOutcome<Real>;

/// Single-precision variants, for callers that trade exactness for memory.
pub type MatrixF32 = numerics::DenseMatrix<f32>;
pub type DenoiserNetF32 = numerics::DenoiserNet<f32>;
