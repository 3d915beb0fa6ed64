use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::config::{Precision, TrainConfig};
use super::sampling::BprSampler;
use super::step::{contrastive_views, encode_main_on_tape, train_step, TrainContext};
use crate::diffkernel::{load_checkpoint, save_checkpoint, ParamStore, Tape};
use crate::error::{KgError, Result};
use crate::evalkit::{full_rank_eval, RankingMetrics};
use crate::graphstore::{Dataset, InteractionGraph};
use crate::model::{Encoded, ParamLayout};
use crate::objectives::{alignment_uniformity, contrastive_loss, sample_contrastive_negatives, AUReport, LossBundle};
use crate::rationale::uniform_subset;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

pub const CHECKPOINT_BEST: &str = "checkpoint_best.bin";
pub const CHECKPOINT_LAST: &str = "checkpoint_last.bin";
pub const METRICS_LOG: &str = "metrics.jsonl";

/// Items used for alignment / uniformity diagnostics at most.
const DIAGNOSTIC_ITEMS: usize = 1024;

/// One evaluation of the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSnapshot {
    pub metrics: RankingMetrics,
    pub au: Option<AUReport>,
    /// Whether every item's contrastive loss sat at or above the perfect-
    /// alignment bound for its realised negatives.
    pub bound_ok: bool,
    /// Smallest `loss - bound` over the evaluated items.
    pub bound_slack: Option<f64>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: u64,
    /// Epoch means of the loss components; absent for the initial evaluation.
    pub losses: Option<LossBundle>,
    pub eval: EvalSnapshot,
}

impl MetricsRecord {
    pub fn to_json(&self) -> Value {
        let n = self.eval.metrics.n;
        let mut m = Map::new();
        m.insert("epoch".into(), json!(self.epoch));
        m.insert("step".into(), json!(self.step));
        let l = self.losses.as_ref();
        m.insert("l_rec".into(), json!(l.map(|b| b.l_rec)));
        m.insert("l_m".into(), json!(l.map(|b| b.l_m)));
        m.insert("l_c".into(), json!(l.map(|b| b.l_c)));
        m.insert("total".into(), json!(l.map(|b| b.total)));
        m.insert(format!("recall@{n}"), json!(self.eval.metrics.recall));
        m.insert(format!("ndcg@{n}"), json!(self.eval.metrics.ndcg));
        m.insert("alignment".into(), json!(self.eval.au.map(|a| a.alignment)));
        m.insert("uniformity".into(), json!(self.eval.au.map(|a| a.uniformity)));
        m.insert("lc_bound_ok".into(), json!(self.eval.bound_ok));
        m.insert("lc_bound_slack".into(), json!(self.eval.bound_slack));
        Value::Object(m)
    }
}

/// Reads a metrics log back as JSON objects.
pub fn read_metrics_log(path: impl AsRef<Path>) -> Result<Vec<Value>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| KgError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Encodes the full graphs (no masking, no noise) and returns the main
/// encoder's embeddings.
pub fn encode_full<T: Scalar>(ctx: &TrainContext<T>, store: &ParamStore<T>, layout: &ParamLayout, cfg: &TrainConfig) -> Encoded<T> {
    let mut tape = Tape::new();
    let p = layout.load(&mut tape, store);
    let (u, e) = encode_main_on_tape(&mut tape, &p, &ctx.full_kg, &ctx.user_op, cfg);
    Encoded {
        users: tape.value(u).clone(),
        entities: tape.value(e).clone(),
    }
}

/// Pool sized by the `workers` setting.
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| KgError::Config(format!("workers: {e}")))
}

/// Ranking metrics on `target` plus the cross-view diagnostics.
pub fn evaluate<T: Scalar>(
    ctx: &TrainContext<T>,
    store: &ParamStore<T>,
    layout: &ParamLayout,
    cfg: &TrainConfig,
    target: &InteractionGraph,
    epoch: usize,
) -> Result<EvalSnapshot> {
    let enc = encode_full(ctx, store, layout, cfg);
    let metrics = thread_pool(cfg.workers)?.install(|| full_rank_eval(&enc.users, &enc.entities, &ctx.train, target, cfg.topn));

    let num_items = ctx.train.num_items();
    let mut rng = stream_rng(cfg.seed, Stream::Eval, epoch as u64);
    let items = uniform_subset(num_items, DIAGNOSTIC_ITEMS.min(num_items), &mut rng);
    if items.len() < 3 {
        return Ok(EvalSnapshot {
            metrics,
            au: None,
            bound_ok: true,
            bound_slack: None,
        });
    }
    let mut tape = Tape::new();
    let p = layout.load(&mut tape, store);
    let (zu, zk) = contrastive_views(&mut tape, &p, &ctx.full_kg, &ctx.full_adj, num_items, &items, cfg);
    let au = alignment_uniformity(tape.value(zu), tape.value(zk), tape.value(zk)).ok();
    let negs = sample_contrastive_negatives(items.len(), &mut rng)?;
    let local: Vec<usize> = (0..items.len()).collect();
    let (_, sims) = contrastive_loss(&mut tape, zu, zk, &local, &negs, &cfg.loss)?;
    let worst = sims.worst_bound_violation(cfg.loss.tau);
    let tol = 100.0 * T::epsilon().as_f64() * (1.0 + 1.0 / cfg.loss.tau);
    Ok(EvalSnapshot {
        metrics,
        au,
        bound_ok: worst <= tol,
        bound_slack: Some(-worst),
    })
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub layout: ParamLayout,
    pub last: ParamStore<T>,
    pub best: ParamStore<T>,
    pub best_epoch: usize,
    pub best_valid: RankingMetrics,
    /// Test metrics of the best parameters.
    pub test: RankingMetrics,
    pub history: Vec<MetricsRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub skipped_full_users: usize,
}

impl<T> TrainOutcome<T> {
    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            best_epoch: self.best_epoch,
            best_valid: self.best_valid,
            test: self.test,
            history: self.history.clone(),
            epochs_run: self.epochs_run,
            stopped_early: self.stopped_early,
        }
    }
}

/// Precision-independent part of a [`TrainOutcome`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_valid: RankingMetrics,
    pub test: RankingMetrics,
    pub history: Vec<MetricsRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

struct Outputs {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| KgError::io(dir, e))?;
        let p = dir.join(METRICS_LOG);
        let f = File::create(&p).map_err(|e| KgError::io(&p, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            log: BufWriter::new(f),
        })
    }

    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        let p = self.dir.join(METRICS_LOG);
        writeln!(self.log, "{}", r.to_json()).map_err(|e| KgError::io(&p, e))?;
        self.log.flush().map_err(|e| KgError::io(&p, e))
    }
}

fn mean_bundle(bundles: &[LossBundle]) -> Option<LossBundle> {
    let first = *bundles.first()?;
    let n = bundles.len() as f64;
    let avg = |f: fn(&LossBundle) -> f64| bundles.iter().map(f).sum::<f64>() / n;
    Some(LossBundle {
        l_rec: avg(|b| b.l_rec),
        l_m: avg(|b| b.l_m),
        l_c: avg(|b| b.l_c),
        l2: avg(|b| b.l2),
        total: avg(|b| b.total),
        ..first
    })
}

/// Trains on `ds` with early stopping on validation Recall@n, writing
/// checkpoints and the metrics log under `out` when given. `resume` continues
/// from saved parameters and optimiser state.
pub fn run_training<T: Scalar>(
    ds: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
    resume: Option<ParamStore<T>>,
) -> Result<TrainOutcome<T>> {
    for w in cfg.validate()? {
        log::warn!("{w}");
    }
    cfg.validate_for(ds.kg.num_triplets(), ds.train.num_edges())?;
    ds.validate()?;
    let ctx = TrainContext::<T>::from_dataset(ds);
    let dims = ctx.dims(cfg.model.dim);
    let (mut store, layout) = match resume {
        Some(s) => {
            let layout = ParamLayout::resolve(&s, &dims)?;
            (s, layout)
        }
        None => ParamLayout::init(&dims, cfg.model.separate_cf_tables, &mut stream_rng(cfg.seed, Stream::Init, 0)),
    };
    let header = dims.header();
    let mut outputs = out.map(Outputs::open).transpose()?;
    let save = |dir: &Path, name: &str, s: &ParamStore<T>| save_checkpoint(dir.join(name), &header, s);

    let steps_per_epoch = ds.train.num_edges().div_ceil(cfg.batch_size.max(1)).max(1) as u64;
    let start_epoch = (store.step() / steps_per_epoch) as usize;
    let skipped_full_users = BprSampler::new(&ds.train).skipped_full_users;
    if skipped_full_users > 0 {
        log::warn!("{skipped_full_users} users interacted with every item and are never sampled");
    }

    let mut history = Vec::new();
    let first = evaluate(&ctx, &store, &layout, cfg, &ds.valid, start_epoch)?;
    let rec = MetricsRecord {
        epoch: start_epoch,
        step: store.step(),
        losses: None,
        eval: first,
    };
    if let Some(o) = outputs.as_mut() {
        o.record(&rec)?;
        save(&o.dir, CHECKPOINT_BEST, &store)?;
    }
    let mut best_valid = rec.eval.metrics;
    let mut best_epoch = start_epoch;
    let mut best = store.clone();
    history.push(rec);

    let mut stale = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0;
    for epoch in start_epoch + 1..=cfg.epochs {
        let mut bundles = Vec::with_capacity(steps_per_epoch as usize);
        for s in 0..steps_per_epoch {
            let counter = (epoch as u64 - 1) * steps_per_epoch + s;
            let mut rng = stream_rng(cfg.seed, Stream::Step, counter);
            if let Some(b) = train_step(&ctx, &mut store, &layout, cfg, &mut rng)? {
                bundles.push(b);
            }
        }
        epochs_run += 1;
        if epoch % cfg.eval_every != 0 {
            continue;
        }
        let eval = evaluate(&ctx, &store, &layout, cfg, &ds.valid, epoch)?;
        let rec = MetricsRecord {
            epoch,
            step: store.step(),
            losses: mean_bundle(&bundles),
            eval,
        };
        if let Some(o) = outputs.as_mut() {
            o.record(&rec)?;
        }
        if rec.eval.metrics.recall > best_valid.recall {
            best_valid = rec.eval.metrics;
            best_epoch = epoch;
            best = store.clone();
            stale = 0;
            if let Some(o) = outputs.as_ref() {
                save(&o.dir, CHECKPOINT_BEST, &best)?;
            }
        } else {
            stale += 1;
        }
        history.push(rec);
        if stale >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    if let Some(o) = outputs.as_ref() {
        save(&o.dir, CHECKPOINT_LAST, &store)?;
    }
    let enc = encode_full(&ctx, &best, &layout, cfg);
    let test = thread_pool(cfg.workers)?.install(|| full_rank_eval(&enc.users, &enc.entities, &ds.train, &ds.test, cfg.topn));
    Ok(TrainOutcome {
        layout,
        last: store,
        best,
        best_epoch,
        best_valid,
        test,
        history,
        epochs_run,
        stopped_early,
        skipped_full_users,
    })
}

/// [`run_training`] at the configured precision, optionally resuming from a
/// checkpoint file.
pub fn run_training_dyn(ds: &Dataset, cfg: &TrainConfig, out: Option<&Path>, resume: Option<&Path>) -> Result<TrainSummary> {
    fn go<T: Scalar>(ds: &Dataset, cfg: &TrainConfig, out: Option<&Path>, resume: Option<&Path>) -> Result<TrainSummary> {
        let store = match resume {
            Some(p) => {
                let (h, s) = load_checkpoint::<T>(p)?;
                TrainContext::<T>::from_dataset(ds).dims(cfg.model.dim).check_header(&h)?;
                Some(s)
            }
            None => None,
        };
        Ok(run_training::<T>(ds, cfg, out, store)?.summary())
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(ds, cfg, out, resume),
        Precision::F64 => go::<f64>(ds, cfg, out, resume),
    }
}
