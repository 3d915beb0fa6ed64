//! Joint training: per-step rationalisation and view construction, the
//! three-branch loss, Adam updates, evaluation, early stopping and
//! checkpointing.

mod config;
mod run;
mod sampling;
mod step;

pub use config::{Precision, TrainConfig, KM_GRID};
pub use run::{
    encode_full, evaluate, read_metrics_log, run_training, run_training_dyn, thread_pool, EvalSnapshot, MetricsRecord, TrainOutcome,
    TrainSummary, CHECKPOINT_BEST, CHECKPOINT_LAST, METRICS_LOG,
};
pub use sampling::{sample_bpr_batch, BprSampler, BprTriple};
pub(crate) use step::encode_main_on_tape;
pub use step::{forward, loss_and_grads, train_step, Forward, StepPlan, TrainContext};
