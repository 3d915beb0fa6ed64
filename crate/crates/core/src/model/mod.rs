//! Encoders: rationale-weighted knowledge aggregation, user aggregation, the
//! LightGCN interaction view and the contrastive projection heads.

mod encode;
mod layout;
mod views;

pub use encode::{
    attention_scores, attention_weights, encode_final, encode_main, kg_aggregate, lightgcn_encode, predict, prefix_rows,
    project_contrastive, user_aggregate, Encoded, ModelConfig,
};
pub use layout::{MlpIds, MlpVars, ModelDims, ParamLayout, ParamVars};
pub use views::{KgView, UiView, ViewKind};
