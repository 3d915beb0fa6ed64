//! Trainable parameters, the reverse-mode tape over the handful of
//! primitives the model needs, Adam, finite-difference gradient checking and
//! the checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod kernels;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, MAGIC, VERSION};
pub use checkpoint::write_atomic;
pub use gradcheck::{grad_check, GradCheckReport, TensorCheck, FD_EPS, REL_FLOOR};
pub use kernels::{bilinear_attention, row_dots, segment_softmax, segment_weighted_mean, SparseMatrix};
pub use matrix::{dot, Matrix};
pub use params::{ParamGrads, ParamId, ParamStore};
pub(crate) use tape::logsumexp;
pub use tape::{Gradients, Tape, Var};
