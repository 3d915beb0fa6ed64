use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{full_rank_eval, RankingMetrics};
use crate::diffkernel::ParamStore;
use crate::error::{KgError, Result};
use crate::graphstore::Dataset;
use crate::model::ParamLayout;
use crate::rationale::Selection;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::trainer::{encode_full, run_training_dyn, TrainConfig, TrainContext, TrainSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialRow {
    pub ratio: f64,
    pub triplets: usize,
    pub metrics: RankingMetrics,
    pub recall_retention: f64,
    pub ndcg_retention: f64,
}

/// The dataset with a uniformly subsampled KG. The subset depends only on
/// `seed` and `ratio`.
pub fn subsample_dataset(ds: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if ratio == 1.0 {
        return Ok(ds.clone());
    }
    let mut rng = stream_rng(seed, Stream::Subsample, (ratio * 1e6).round() as u64);
    Ok(ds.with_kg(ds.kg.subsample(ratio, &mut rng)?))
}

/// Evaluates `eval` on the dataset with each keep ratio and reports retention
/// relative to the full graph.
pub fn partial_kg_eval<F>(ds: &Dataset, ratios: &[f64], seed: u64, mut eval: F) -> Result<Vec<PartialRow>>
where
    F: FnMut(&Dataset) -> Result<RankingMetrics>,
{
    for &r in ratios {
        if !(r > 0.0 && r <= 1.0) {
            return Err(KgError::Config(format!("partial-kg: keep ratio {r} outside (0, 1]")));
        }
    }
    let reference = eval(ds)?;
    let ret = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    ratios
        .iter()
        .map(|&ratio| {
            let sub = subsample_dataset(ds, ratio, seed)?;
            let metrics = if ratio == 1.0 { reference } else { eval(&sub)? };
            Ok(PartialRow {
                ratio,
                triplets: sub.kg.base_triplets().len(),
                metrics,
                recall_retention: ret(metrics.recall, reference.recall),
                ndcg_retention: ret(metrics.ndcg, reference.ndcg),
            })
        })
        .collect()
}

/// Fast mode: keeps trained parameters and re-encodes on the given graph.
pub fn reencode_evaluator<'a, T: Scalar>(
    store: &'a ParamStore<T>,
    layout: &'a ParamLayout,
    cfg: &'a TrainConfig,
) -> impl FnMut(&Dataset) -> Result<RankingMetrics> + 'a {
    move |ds| {
        let ctx = TrainContext::<T>::from_dataset(ds);
        let enc = encode_full(&ctx, store, layout, cfg);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers.max(1))
            .build()
            .map_err(|e| KgError::Config(format!("workers: {e}")))?;
        Ok(pool.install(|| full_rank_eval(&enc.users, &enc.entities, &ds.train, &ds.test, cfg.topn)))
    }
}

/// Desk-scale mode: trains from scratch on the given graph.
pub fn retrain_evaluator(cfg: &TrainConfig) -> impl FnMut(&Dataset) -> Result<RankingMetrics> + '_ {
    move |ds| Ok(run_training_dyn(ds, cfg, None, None)?.test)
}

pub fn partial_table(rows: &[PartialRow]) -> String {
    let mut out = String::new();
    let n = rows.first().map_or(20, |r| r.metrics.n);
    let _ = writeln!(out, "{:>6}  {:>8}  {:>10}  {:>10}  {:>9}  {:>9}", "ratio", "triplets", format!("recall@{n}"), format!("ndcg@{n}"), "ret_rec", "ret_ndcg");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6.2}  {:>8}  {:>10.6}  {:>10.6}  {:>9.4}  {:>9.4}",
            r.ratio, r.triplets, r.metrics.recall, r.metrics.ndcg, r.recall_retention, r.ndcg_retention
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No reconstruction loss and no masking.
    NoMae,
    /// Uniform-random mask set of the same size.
    RandomMask,
    /// No contrastive loss.
    NoCl,
    /// Uniform-random KG noise set and interaction drop set of the same sizes.
    RandomAug,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoMae, Variant::RandomMask, Variant::NoCl, Variant::RandomAug];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMae => "no_mae",
            Variant::RandomMask => "random_mask",
            Variant::NoCl => "no_cl",
            Variant::RandomAug => "random_aug",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoMae => {
                c.loss.lambda1 = 0.0;
                c.rationale.k_m = 0;
            }
            Variant::RandomMask => c.rationale.mask_selection = Selection::Random,
            Variant::NoCl => c.loss.lambda2 = 0.0,
            Variant::RandomAug => c.rationale.augment_selection = Selection::Random,
        }
        c
    }

    /// Parses a comma-separated list; `all` expands to every variant.
    pub fn parse_list(s: &str) -> Result<Vec<Variant>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Variant::ALL);
                continue;
            }
            out.push(part.parse()?);
        }
        if out.is_empty() {
            return Err(KgError::Config("ablate: empty variant list".into()));
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|v| seen.insert(*v));
        Ok(out)
    }
}

impl std::str::FromStr for Variant {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| KgError::Config(format!("ablate: unknown variant {s:?}")))
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedStats {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SeedStats {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n.max(1.0);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        SeedStats { values, mean, std }
    }
}

/// Trains `cfg` once per seed. `dataset_for` may return the same data for
/// every seed or regenerate it.
pub fn multi_seed<F>(cfg: &TrainConfig, seeds: &[u64], dataset_for: F) -> Result<Vec<TrainSummary>>
where
    F: Fn(u64) -> Result<Dataset>,
{
    seeds
        .iter()
        .map(|&s| {
            let ds = dataset_for(s)?;
            let mut c = cfg.clone();
            c.seed = s;
            run_training_dyn(&ds, &c, None, None)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub recall: SeedStats,
    pub ndcg: SeedStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub n: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let n = self.n;
        let _ = writeln!(out, "{:<12}  {:>20}  {:>20}", "variant", format!("recall@{n}"), format!("ndcg@{n}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12}  {:>10.6} ± {:<7.4}  {:>10.6} ± {:<7.4}",
                r.variant.name(),
                r.recall.mean,
                r.recall.std,
                r.ndcg.mean,
                r.ndcg.std
            );
        }
        let _ = writeln!(out, "seeds: {:?}", self.seeds);
        out
    }
}

/// Trains every variant on every seed and tabulates test metrics.
pub fn ablate<F>(cfg: &TrainConfig, variants: &[Variant], seeds: &[u64], dataset_for: F) -> Result<AblationReport>
where
    F: Fn(u64) -> Result<Dataset>,
{
    let mut rows = Vec::new();
    for &v in variants {
        let runs = multi_seed(&v.apply(cfg), seeds, &dataset_for)?;
        rows.push(AblationRow {
            variant: v,
            recall: SeedStats::new(runs.iter().map(|r| r.test.recall).collect()),
            ndcg: SeedStats::new(runs.iter().map(|r| r.test.ndcg).collect()),
        });
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        n: cfg.topn,
        rows,
    })
}
