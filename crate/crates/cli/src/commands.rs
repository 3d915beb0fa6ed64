use std::path::{Path, PathBuf};

use kgrec::diffkernel::{load_checkpoint, ParamStore};
use kgrec::evalkit::{
    ablate as run_ablation, aggregate, embedding_scorer, group_eval, partial_kg_eval, partial_table, per_user_metrics,
    random_baseline, rationale_report, reencode_evaluator, retrain_evaluator, GroupKind, RankingMetrics, Variant,
};
use kgrec::graphstore::{Dataset, InteractionGraph};
use kgrec::model::ParamLayout;
use kgrec::rng::{stream_rng, Stream};
use kgrec::selfcheck::{gradcheck_terms, run_suites, Fault, Suite};
use kgrec::toy::generate_toy;
use kgrec::trainer::{
    encode_full, run_training_dyn, thread_pool, Precision, TrainConfig, TrainContext, TrainSummary, CHECKPOINT_BEST,
};
use kgrec::Scalar;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::{DatasetRecord, RunManifest, MANIFEST};
use crate::setup::{
    is_toy, load_dataset, preset_for, parse_list, prepare_out, reload, require_dataset, resolve_config, write_json, write_text,
};
use crate::{CheckArgs, Common, ConfigArgs, EvaluateArgs, ExplainArgs, MultiArgs, PrepareArgs, TrainArgs};

const DEFAULT_SEEDS: u64 = 5;

fn manifest(command: &str, argv: &[String], out: &Path, cfg: &TrainConfig, dataset: Option<DatasetRecord>, extra: serde_json::Value) -> RunManifest {
    RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        argv: argv.to_vec(),
        seed: cfg.seed,
        out: out.to_path_buf(),
        dataset,
        config: cfg.clone(),
        extra,
    }
}

fn out_dir(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(default))
}

fn summary_json(s: &TrainSummary, ds: &Dataset, n: usize) -> serde_json::Value {
    json!({
        "best_epoch": s.best_epoch,
        "epochs_run": s.epochs_run,
        "stopped_early": s.stopped_early,
        "best_valid": s.best_valid,
        "test": s.test,
        "random_test": random_baseline(&ds.train, &ds.test, n),
    })
}

fn print_metrics(label: &str, m: &RankingMetrics) {
    println!(
        "{label}: recall@{n} = {:.6}  ndcg@{n} = {:.6}  ({} users)",
        m.recall,
        m.ndcg,
        m.users_evaluated,
        n = m.n
    );
}

/// Trains into `out` and writes the summary files.
fn train_into(ds: &Dataset, cfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> CliResult<TrainSummary> {
    let s = run_training_dyn(ds, cfg, Some(out), resume)?;
    write_json(&out.join("summary.json"), &summary_json(&s, ds, cfg.topn))?;
    let kv = format!(
        "best_epoch = {}\nepochs_run = {}\nstopped_early = {}\n{}{}",
        s.best_epoch,
        s.epochs_run,
        s.stopped_early,
        s.best_valid.to_kv("valid"),
        s.test.to_kv("test")
    );
    write_text(&out.join("report.kv"), &kv)?;
    Ok(s)
}

pub fn train(a: TrainArgs, argv: &[String]) -> CliResult<()> {
    if let Some(m) = &a.from_manifest {
        return replay(m, &a.common, argv);
    }
    if a.common.sweep.is_some() {
        return sweep(
            MultiArgs {
                common: a.common,
                seeds: a.seeds,
                values: a.values,
                param: None,
            },
            argv,
        );
    }
    if a.common.ablate.is_some() {
        return ablate(
            MultiArgs {
                common: a.common,
                seeds: a.seeds,
                values: a.values,
                param: None,
            },
            argv,
        );
    }
    let c = &a.common;
    let source = require_dataset(c)?;
    let cfg = resolve_config(c, None)?;
    if let Some(r) = &a.resume {
        if !r.is_file() {
            return Err(CliError::Usage(format!("checkpoint not found: {}", r.display())));
        }
    }
    let (ds, record) = load_dataset(source, cfg.seed, cfg.inverse_relations, None)?;
    cfg.validate_for(ds.kg.num_triplets(), ds.train.num_edges())?;
    let out = prepare_out(&out_dir(c, "train"), c.overwrite)?;
    let extra = json!({ "resume": a.resume });
    manifest("train", argv, &out, &cfg, Some(record), extra).write(&out)?;

    let s = train_into(&ds, &cfg, &out, a.resume.as_deref())?;
    println!("best epoch {} of {} run", s.best_epoch, s.epochs_run);
    print_metrics("valid", &s.best_valid);
    print_metrics("test", &s.test);
    let opts = ReportOpts::from_common(c, "test", false, 5)?;
    if opts.any() {
        let v = dispatch_reports(&ds, &cfg, &out.join(CHECKPOINT_BEST), &opts, &out)?;
        write_json(&out.join("reports.json"), &v)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn replay(path: &Path, c: &Common, argv: &[String]) -> CliResult<()> {
    let m = RunManifest::read(path)?;
    if m.command != "train" {
        return Err(CliError::Usage(format!("{}: manifest of `{}`, not `train`", path.display(), m.command)));
    }
    let record = m
        .dataset
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{}: manifest has no dataset", path.display())))?;
    let ds = reload(&record, m.config.inverse_relations)?;
    let default = {
        let mut s = m.out.clone().into_os_string();
        s.push("-replay");
        PathBuf::from(s)
    };
    let out = prepare_out(&c.out.clone().unwrap_or(default), c.overwrite)?;
    let resume = m.extra.get("resume").and_then(|r| r.as_str()).map(PathBuf::from);
    let extra = json!({ "replay_of": path, "resume": resume });
    manifest("train", argv, &out, &m.config, Some(record), extra).write(&out)?;
    let s = train_into(&ds, &m.config, &out, resume.as_deref())?;
    print_metrics("test", &s.test);
    println!("wrote {}", out.display());
    Ok(())
}

/// Seeds from `--seeds`, or five consecutive seeds starting at the config seed.
fn seed_list(s: Option<&str>, cfg: &TrainConfig) -> CliResult<Vec<u64>> {
    match s {
        Some(s) => {
            let v: Vec<u64> = parse_list("seeds", s)?;
            if v.is_empty() {
                return Err(CliError::Usage("--seeds: empty list".into()));
            }
            Ok(v)
        }
        None => Ok((cfg.seed..cfg.seed + DEFAULT_SEEDS).collect()),
    }
}

pub fn ablate(a: MultiArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let source = require_dataset(c)?.to_string();
    let cfg = resolve_config(c, None)?;
    let variants = Variant::parse_list(c.ablate.as_deref().unwrap_or("all"))?;
    let seeds = seed_list(a.seeds.as_deref(), &cfg)?;
    // toy data is regenerated per seed; a directory is loaded once
    let (ds, record) = load_dataset(&source, cfg.seed, cfg.inverse_relations, None)?;
    for v in &variants {
        v.apply(&cfg).validate_for(ds.kg.num_triplets(), ds.train.num_edges())?;
    }
    let out = prepare_out(&out_dir(c, "ablate"), c.overwrite)?;
    let names: Vec<&str> = variants.iter().map(|v| v.name()).collect();
    let extra = json!({ "variants": names, "seeds": seeds });
    manifest("ablate", argv, &out, &cfg, Some(record), extra).write(&out)?;

    let toy = is_toy(&source);
    let inverse = cfg.inverse_relations;
    let report = run_ablation(&cfg, &variants, &seeds, |s| {
        if toy {
            regenerate_toy(&source, s, inverse)
        } else {
            Ok(ds.clone())
        }
    })?;
    let table = report.to_table();
    print!("{table}");
    write_text(&out.join("ablation.txt"), &table)?;
    write_json(&out.join("ablation.json"), &serde_json::to_value(&report).expect("report serialises"))?;
    Ok(())
}

pub fn sweep(a: MultiArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let param = a
        .param
        .clone()
        .or_else(|| c.sweep.clone())
        .ok_or_else(|| CliError::Usage("sweep needs a parameter name".into()))?
        .replace('-', "_");
    let source = require_dataset(c)?;
    let cfg = resolve_config(c, None)?;
    let values: Vec<String> = match &a.values {
        Some(v) => parse_list("values", v)?,
        None => TrainConfig::sweep_grid(&param)?,
    };
    let (ds, record) = load_dataset(source, cfg.seed, cfg.inverse_relations, None)?;
    // every point is checked before anything runs
    let mut points = Vec::new();
    for v in &values {
        let mut pc = cfg.clone();
        pc.set(&param, v)?;
        pc.validate()?;
        pc.validate_for(ds.kg.num_triplets(), ds.train.num_edges())?;
        points.push((v.clone(), pc));
    }
    let out = prepare_out(&out_dir(c, "sweep"), c.overwrite)?;
    let extra = json!({ "param": param, "values": values });
    manifest("sweep", argv, &out, &cfg, Some(record.clone()), extra).write(&out)?;

    let mut table = format!("{:<16}  {:>10}  {:>10}  {:>10}  {:>10}\n", param, "best_epoch", "valid_rec", "test_rec", "test_ndcg");
    for (v, pc) in &points {
        let sub = prepare_out(&out.join(format!("{param}={v}")), true)?;
        manifest("train", argv, &sub, pc, Some(record.clone()), json!({ "sweep": { "param": param, "value": v } })).write(&sub)?;
        let s = train_into(&ds, pc, &sub, None)?;
        let line = format!(
            "{:<16}  {:>10}  {:>10.6}  {:>10.6}  {:>10.6}\n",
            v, s.best_epoch, s.best_valid.recall, s.test.recall, s.test.ndcg
        );
        print!("{line}");
        table.push_str(&line);
    }
    write_text(&out.join("sweep.txt"), &table)?;
    Ok(())
}

/// Which sub-reports `evaluate` (or `train`) should produce.
struct ReportOpts {
    split: String,
    groups: Option<GroupKind>,
    num_groups: usize,
    partial: Option<Vec<f64>>,
    retrain: bool,
    explain: bool,
}

impl ReportOpts {
    fn from_common(c: &Common, split: &str, retrain: bool, num_groups: usize) -> CliResult<Self> {
        if !matches!(split, "test" | "valid" | "train") {
            return Err(CliError::Usage(format!("--split: expected test, valid or train, got `{split}`")));
        }
        Ok(ReportOpts {
            split: split.to_string(),
            groups: c.groups.as_deref().map(str::parse).transpose()?,
            num_groups,
            partial: c.partial_kg.as_deref().map(|s| parse_list("partial-kg", s)).transpose()?,
            retrain,
            explain: c.explain,
        })
    }

    fn any(&self) -> bool {
        self.groups.is_some() || self.partial.is_some() || self.explain
    }
}

fn load_model<T: Scalar>(ctx: &TrainContext<T>, cfg: &TrainConfig, path: &Path) -> CliResult<(ParamStore<T>, ParamLayout)> {
    let (h, store) = load_checkpoint::<T>(path)?;
    let dims = ctx.dims(cfg.model.dim);
    dims.check_header(&h)?;
    let layout = ParamLayout::resolve(&store, &dims)?;
    Ok((store, layout))
}

fn reports<T: Scalar>(ds: &Dataset, cfg: &TrainConfig, ckpt: &Path, o: &ReportOpts, out: &Path) -> CliResult<serde_json::Value> {
    let ctx = TrainContext::<T>::from_dataset(ds);
    let (store, layout) = load_model(&ctx, cfg, ckpt)?;
    let enc = encode_full(&ctx, &store, &layout, cfg);
    let empty = InteractionGraph::empty(ds.num_users(), ds.num_items());
    let (exclude, target) = match o.split.as_str() {
        "valid" => (&ds.train, &ds.valid),
        "train" => (&empty, &ds.train),
        _ => (&ds.train, &ds.test),
    };
    let n = cfg.topn;
    let pool = thread_pool(cfg.workers)?;
    let per_user = pool.install(|| {
        per_user_metrics(embedding_scorer(&enc.users, &enc.entities, ds.num_items()), ds.num_users(), exclude, target, n)
    });
    let metrics = aggregate(&per_user, n);
    print_metrics(&o.split, &metrics);
    write_text(&out.join("metrics.kv"), &metrics.to_kv(&o.split))?;
    let mut v = json!({ "split": o.split, "metrics": metrics });

    if let Some(kind) = o.groups {
        let g = group_eval(&per_user, &ds.train, kind, o.num_groups, n)?;
        let table = g.to_table();
        print!("{table}");
        write_text(&out.join("groups.txt"), &table)?;
        v["groups"] = json!(g.groups.iter().map(|g| json!({ "lo": g.lo, "hi": g.hi, "users": g.users.len(), "metrics": g.metrics })).collect::<Vec<_>>());
        v["group_warnings"] = json!(g.warnings);
    }
    if let Some(ratios) = &o.partial {
        let rows = if o.retrain {
            partial_kg_eval(ds, ratios, cfg.seed, retrain_evaluator(cfg))?
        } else {
            partial_kg_eval(ds, ratios, cfg.seed, reencode_evaluator(&store, &layout, cfg))?
        };
        let table = partial_table(&rows);
        print!("{table}");
        write_text(&out.join("partial_kg.txt"), &table)?;
        v["partial_kg"] = serde_json::to_value(&rows).expect("rows serialise");
    }
    if o.explain {
        let r = rationale_report(&ds.kg, &store, &layout, ds.relation_names.as_deref(), ds.item_categories.as_deref());
        let table = r.to_table();
        print!("{table}");
        write_text(&out.join("explain.txt"), &table)?;
        v["explain"] = serde_json::to_value(&r).expect("report serialises");
    }
    Ok(v)
}

fn dispatch_reports(ds: &Dataset, cfg: &TrainConfig, ckpt: &Path, o: &ReportOpts, out: &Path) -> CliResult<serde_json::Value> {
    match cfg.precision {
        Precision::F32 => reports::<f32>(ds, cfg, ckpt, o, out),
        Precision::F64 => reports::<f64>(ds, cfg, ckpt, o, out),
    }
}

/// Config and data for a checkpoint: flags over the training manifest (given
/// or found beside the checkpoint); `--dataset` overrides the manifest's data.
fn checkpoint_context(c: &Common, ckpt: Option<&Path>, manifest_path: Option<&Path>) -> CliResult<(TrainConfig, Dataset, Option<DatasetRecord>)> {
    let found = manifest_path.map(Path::to_path_buf).or_else(|| {
        let p = ckpt?.parent()?.join(MANIFEST);
        p.is_file().then_some(p)
    });
    let m = found.as_deref().map(RunManifest::read).transpose()?;
    let cfg = resolve_config(c, m.as_ref().map(|m| m.config.clone()))?;
    match (&c.dataset, m.and_then(|m| m.dataset)) {
        (Some(src), _) => {
            let (ds, rec) = load_dataset(src, cfg.seed, cfg.inverse_relations, None)?;
            Ok((cfg, ds, Some(rec)))
        }
        (None, Some(rec)) => Ok((cfg.clone(), reload(&rec, cfg.inverse_relations)?, Some(rec))),
        (None, None) => Err(CliError::Usage("--dataset is required when no training manifest is available".into())),
    }
}

pub fn evaluate(a: EvaluateArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let ckpt = a.checkpoint.as_deref().ok_or_else(|| CliError::Usage("evaluate needs --checkpoint".into()))?;
    if !ckpt.is_file() {
        return Err(CliError::Usage(format!("checkpoint not found: {}", ckpt.display())));
    }
    let opts = ReportOpts::from_common(c, &a.split, a.retrain, a.num_groups)?;
    let (cfg, ds, record) = checkpoint_context(c, Some(ckpt), a.manifest.as_deref())?;
    let default = ckpt.parent().unwrap_or(Path::new(".")).join("eval");
    let out = prepare_out(&c.out.clone().unwrap_or(default), c.overwrite)?;
    manifest("evaluate", argv, &out, &cfg, record, json!({ "checkpoint": ckpt, "split": a.split })).write(&out)?;
    let v = dispatch_reports(&ds, &cfg, ckpt, &opts, &out)?;
    write_json(&out.join("reports.json"), &v)?;
    Ok(())
}

pub fn explain(a: ExplainArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    if let Some(p) = &a.checkpoint {
        if !p.is_file() {
            return Err(CliError::Usage(format!("checkpoint not found: {}", p.display())));
        }
    }
    let (cfg, ds, record) = checkpoint_context(c, a.checkpoint.as_deref(), a.manifest.as_deref())?;
    let out = c.out.as_deref().map(|o| prepare_out(o, c.overwrite)).transpose()?;
    if let Some(o) = &out {
        manifest("explain", argv, o, &cfg, record, json!({ "checkpoint": a.checkpoint })).write(o)?;
    }
    fn go<T: Scalar>(ds: &Dataset, cfg: &TrainConfig, ckpt: Option<&Path>) -> CliResult<kgrec::evalkit::RationaleReport> {
        let ctx = TrainContext::<T>::from_dataset(ds);
        let (store, layout) = match ckpt {
            Some(p) => load_model(&ctx, cfg, p)?,
            None => ParamLayout::init::<T, _>(
                &ctx.dims(cfg.model.dim),
                cfg.model.separate_cf_tables,
                &mut stream_rng(cfg.seed, Stream::Init, 0),
            ),
        };
        Ok(rationale_report(&ds.kg, &store, &layout, ds.relation_names.as_deref(), ds.item_categories.as_deref()))
    }
    let r = match cfg.precision {
        Precision::F32 => go::<f32>(&ds, &cfg, a.checkpoint.as_deref())?,
        Precision::F64 => go::<f64>(&ds, &cfg, a.checkpoint.as_deref())?,
    };
    let table = r.to_table();
    print!("{table}");
    if let Some(o) = &out {
        write_text(&o.join("explain.txt"), &table)?;
        write_json(&o.join("explain.json"), &serde_json::to_value(&r).expect("report serialises"))?;
    }
    Ok(())
}

fn parse_fault(s: Option<&str>) -> CliResult<Option<Fault>> {
    match s {
        None => Ok(None),
        Some("gradient" | "gradient-bug" | "gradient_bug") => Ok(Some(Fault::GradientBug)),
        Some(other) => Err(CliError::Usage(format!("unknown fault `{other}`"))),
    }
}

pub fn gradcheck(a: CheckArgs) -> CliResult<()> {
    let fault = parse_fault(a.inject_fault.as_deref())?;
    let seeds = a.common.seed.map_or_else(|| vec![1, 2], |s| vec![s]);
    let mut failed = Vec::new();
    for s in seeds {
        for (term, report) in gradcheck_terms(s, fault)? {
            println!("seed {s} {}:\n{report}", term.name());
            if !report.passed {
                failed.push(format!("seed {s} {} (rel {:.3e})", term.name(), report.worst()));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed: {}", failed.join(", "))))
    }
}

pub fn selfcheck(a: CheckArgs) -> CliResult<()> {
    let fault = parse_fault(a.inject_fault.as_deref())?;
    let suites: Vec<Suite> = if a.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suites.iter().map(|s| s.trim().parse()).collect::<Result<_, _>>()?
    };
    let results = run_suites(&suites, fault);
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<14} {}  ({} cases, {:.2}s)",
            r.suite.name(),
            if r.passed() { "PASS" } else { "FAIL" },
            r.cases,
            r.seconds
        );
        for f in r.failures.iter().take(10) {
            println!("    {f}");
        }
        if r.failures.len() > 10 {
            println!("    ... {} more", r.failures.len() - 10);
        }
        if !r.passed() {
            failed.push(r.suite.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("failed suites: {}", failed.join(", "))))
    }
}

pub fn config(a: ConfigArgs) -> CliResult<()> {
    let cfg = if a.dump_defaults {
        match a.preset.as_str() {
            "default" => TrainConfig::default(),
            "toy" | "toy-tiny" => preset_for(Some(a.preset.as_str())),
            p => return Err(CliError::Usage(format!("unknown preset `{p}` (expected default, toy or toy-tiny)"))),
        }
    } else {
        resolve_config(&a.common, None)?
    };
    print!("{}", cfg.to_toml());
    Ok(())
}

pub fn prepare(a: PrepareArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let source = require_dataset(c)?;
    let cfg = resolve_config(c, None)?;
    let out = c.out.clone().ok_or_else(|| CliError::Usage("prepare needs --out".into()))?;
    let (ds, record) = load_dataset(source, cfg.seed, false, a.core)?;
    let out = prepare_out(&out, c.overwrite)?;
    manifest("prepare", argv, &out, &cfg, Some(record), json!({ "core": a.core })).write(&out)?;
    ds.write_dir(&out)?;
    let stats = format!(
        "users = {}\nitems = {}\nentities = {}\nrelations = {}\ntriplets = {}\ntrain_edges = {}\nvalid_edges = {}\ntest_edges = {}\n",
        ds.num_users(),
        ds.num_items(),
        ds.kg.num_entities(),
        ds.kg.base_relations(),
        ds.kg.base_triplets().len(),
        ds.train.num_edges(),
        ds.valid.num_edges(),
        ds.test.num_edges()
    );
    print!("{stats}");
    write_text(&out.join("stats.kv"), &stats)?;
    Ok(())
}

fn regenerate_toy(source: &str, seed: u64, inverse: bool) -> kgrec::Result<Dataset> {
    let t = if source == "toy" { kgrec::toy::ToyConfig::default() } else { kgrec::toy::ToyConfig::tiny() };
    generate_toy(&t, seed, inverse)
}
