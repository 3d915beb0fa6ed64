//! Full-rank ranking metrics, baselines, user-group breakdowns, partial-KG
//! sweeps, ablations and rationale reports.

mod explain;
mod groups;
mod metrics;
mod probe;
mod studies;

pub use explain::{rationale_report, relation_name, report_from_gamma, CategoryScores, RationaleReport, RelationScore};
pub use groups::{group_eval, quantile_groups, user_statistic, Group, GroupKind, GroupReport};
pub use metrics::{
    aggregate, embedding_scorer, full_rank_eval, ideal_dcg, per_user_metrics, popularity_baseline, random_baseline,
    score_ranking, top_n_excluding, RankingMetrics, UserMetrics,
};
pub use probe::{auc, reconstruction_probe, ReconstructionReport};
pub use studies::{
    ablate, multi_seed, partial_kg_eval, partial_table, reencode_evaluator, retrain_evaluator, subsample_dataset, AblationReport,
    AblationRow, PartialRow, SeedStats, Variant,
};
