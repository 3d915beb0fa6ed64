//! Knowledge-graph rationalized recommendation.
//!
//! Triplet rationale scores from a bilinear attention drive three things at
//! once: the weighting of knowledge aggregation, which triplets are masked
//! and reconstructed, and which triplets and interactions are dropped before
//! cross-view contrast. All numeric code is generic over [`Scalar`]
//! (`f32` or `f64`).

pub mod diffkernel;
pub mod error;
pub mod evalkit;
pub mod graphstore;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod rationale;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod toy;
pub mod trainer;

pub use error::{KgError, Result};
pub use scalar::Scalar;

pub type Matrix32 = diffkernel::Matrix<f32>;
pub type Matrix64 = diffkernel::Matrix<f64>;
pub type Tape32 = diffkernel::Tape<f32>;
pub type Tape64 = diffkernel::Tape<f64>;
pub type ParamStore32 = diffkernel::ParamStore<f32>;
pub type ParamStore64 = diffkernel::ParamStore<f64>;
pub type TrainContext32 = trainer::TrainContext<f32>;
pub type TrainContext64 = trainer::TrainContext<f64>;
pub type TrainOutcome32 = trainer::TrainOutcome<f32>;
pub type TrainOutcome64 = trainer::TrainOutcome<f64>;
