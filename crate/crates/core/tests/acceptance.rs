//! Acceptance gate. Runs without the libtest harness so that every
//! `criterion N: PASS|FAIL ...` line shows up in plain `cargo test` output;
//! exits non-zero when any criterion fails.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use kgrec::diffkernel::{Matrix, Tape};
use kgrec::evalkit::{ablate, random_baseline, rationale_report, reconstruction_probe, score_ranking, RankingMetrics, ReconstructionReport, Variant};
use kgrec::graphstore::Dataset;
use kgrec::model::ParamLayout;
use kgrec::objectives::{bpr_loss, contrastive_item_loss, contrastive_lower_bound, Reduction};
use kgrec::rng::{stream_rng, Stream};
use kgrec::selfcheck::{gradcheck_terms, gradient_instance, metrics_case, softmax_topk_case, sparse_dense_case, LossTerm, DENSE_TOL, GRAD_TOL, METRIC_TOL};
use kgrec::toy::{generate_toy, ToyConfig, PLANTED_RELATION};
use kgrec::trainer::{read_metrics_log, run_training, Precision, TrainConfig, TrainContext, TrainOutcome, METRICS_LOG};
use rand::Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn report(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

struct SeedRun {
    seed: u64,
    ds: Dataset,
    cfg: TrainConfig,
    out: TrainOutcome<f32>,
    random: RankingMetrics,
}

struct ToyRuns {
    runs: Vec<SeedRun>,
    elapsed: Duration,
}

fn toy_cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::toy();
    cfg.seed = seed;
    cfg
}

/// Five full toy trainings at the default precision, shared by several criteria.
fn toy_runs() -> &'static ToyRuns {
    static RUNS: OnceLock<ToyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let runs = SEEDS
            .iter()
            .map(|&seed| {
                let cfg = toy_cfg(seed);
                assert_eq!(cfg.precision, Precision::F32);
                assert!(cfg.epochs <= 200);
                let ds = generate_toy(&ToyConfig::default(), seed, cfg.inverse_relations).unwrap();
                let out = run_training::<f32>(&ds, &cfg, None, None).unwrap();
                let random = random_baseline(&ds.train, &ds.test, cfg.topn);
                SeedRun { seed, ds, cfg, out, random }
            })
            .collect();
        ToyRuns {
            runs,
            elapsed: start.elapsed(),
        }
    })
}

fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let (ds, cfg) = gradient_instance(1).unwrap();
    let sized = ds.num_users() <= 10 && ds.kg.num_entities() <= 20 && cfg.model.dim == 8 && cfg.precision == Precision::F64;
    let mut worst = 0.0f64;
    let mut terms = Vec::new();
    let mut all = true;
    for seed in [1u64, 2] {
        for (term, r) in gradcheck_terms(seed, None).unwrap() {
            worst = worst.max(r.worst());
            all &= r.passed && r.worst() <= GRAD_TOL;
            if seed == 1 {
                terms.push(term);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = sized && all && terms == LossTerm::ALL && secs < 30.0;
    report(1, pass, &format!("worst relative error {worst:.3e} (tol {GRAD_TOL:.0e}) over l_rec, l_m, l_c, joint; {secs:.1}s"));
    assert!(pass);
}

fn criterion_02_sparse_kernels_match_dense_oracles() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..120u64 {
        worst = worst.max(sparse_dense_case(seed).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= DENSE_TOL && secs < 60.0;
    report(2, pass, &format!("120 random graphs, max deviation {worst:.3e} (tol {DENSE_TOL:.0e}); {secs:.2}s"));
    assert!(pass);
}

fn criterion_03_rationale_invariants() {
    let mut failures = Vec::new();
    for seed in 0..200u64 {
        for f in softmax_topk_case(seed).unwrap() {
            failures.push(format!("seed {seed}: {f}"));
        }
    }
    let pass = failures.is_empty();
    report(3, pass, &format!("200 seeds, {} failed checks", failures.len()));
    assert!(pass, "{failures:#?}");
}

fn criterion_04_metric_oracles() {
    let worst = (0..200u64).map(metrics_case).fold(0.0f64, f64::max);
    let (_, ndcg) = score_ranking(&[5, 7], &[7], 20);
    let expected = 1.0 / 3f64.log2();
    let pass = worst <= METRIC_TOL && (ndcg - expected).abs() < 1e-12 && (ndcg - 0.630930).abs() < 1e-6;
    report(4, pass, &format!("200 instances, max deviation {worst:.3e}; single hit at rank 2 ndcg = {ndcg:.6}"));
    assert!(pass);
}

fn criterion_05_loss_point_values_and_bound() {
    let mut tape = Tape::<f64>::new();
    let pos = tape.input(Matrix::scalar(0.3));
    let neg = tape.input(Matrix::scalar(0.3));
    let l = bpr_loss(&mut tape, pos, neg, Reduction::Mean);
    let ln2 = tape.value(l).item();
    let ln3 = contrastive_item_loss(0.4, &[0.4, 0.4], 1.0, false);
    let mut ok = (ln2 - 2f64.ln()).abs() < 1e-12 && (ln2 - 0.693147).abs() < 1e-6;
    ok &= (ln3 - 3f64.ln()).abs() < 1e-12 && (ln3 - 1.098612).abs() < 1e-6;

    // the bound on random similarities
    let mut rng = stream_rng(5, Stream::Eval, 0);
    let mut random_ok = true;
    for _ in 0..10_000 {
        let tau = rng.gen_range(0.05..2.0);
        let negs = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let p = rng.gen_range(-1.0..1.0);
        random_ok &= contrastive_item_loss(p, &negs, tau, false) >= contrastive_lower_bound(&negs, tau) - 1e-12;
    }

    // at every logged evaluation of the toy runs
    let runs = toy_runs();
    let evals: usize = runs.runs.iter().map(|r| r.out.history.len()).sum();
    let logged_ok = runs.runs.iter().all(|r| r.out.history.iter().all(|h| h.eval.bound_ok));
    let pass = ok && random_ok && logged_ok;
    report(
        5,
        pass,
        &format!("-ln sigma(0) = {ln2:.6}, equal-similarity loss = {ln3:.6}; bound held at {evals} logged evaluations: {logged_ok}"),
    );
    assert!(pass);
}

fn criterion_06_end_to_end_learning() {
    let runs = toy_runs();
    let mut beats = 0;
    let mut aligned = 0;
    let mut lines = Vec::new();
    for r in &runs.runs {
        let ratio = r.out.test.recall / r.random.recall;
        let first = r.out.history[0].eval.au.map(|a| a.alignment);
        let at_best = r.out.history.iter().find(|h| h.epoch == r.out.best_epoch).and_then(|h| h.eval.au).map(|a| a.alignment);
        let decreased = matches!((first, at_best), (Some(a), Some(b)) if b < a);
        beats += usize::from(ratio >= 3.0);
        aligned += usize::from(decreased);
        lines.push(format!(
            "seed {}: recall@20 {:.4} vs random {:.4} ({ratio:.2}x), best epoch {}, alignment {:.3} -> {:.3}",
            r.seed,
            r.out.test.recall,
            r.random.recall,
            r.out.best_epoch,
            first.unwrap_or(f64::NAN),
            at_best.unwrap_or(f64::NAN)
        ));
    }
    let secs = runs.elapsed.as_secs_f64();
    let pass = beats >= 4 && aligned == SEEDS.len() && secs < 600.0;
    for l in &lines {
        println!("    {l}");
    }
    report(6, pass, &format!("{beats}/5 seeds at >= 3x random, alignment decreased in {aligned}/5; {secs:.1}s for all five runs"));
    assert!(pass);
}

fn criterion_07_reconstruction_signal() {
    let runs = toy_runs();
    let mut good = 0;
    for r in &runs.runs {
        let ctx = TrainContext::<f32>::from_dataset(&r.ds);
        let mut rng = stream_rng(r.seed, Stream::Eval, 1 << 20);
        let p: ReconstructionReport = reconstruction_probe(&ctx, &r.out.best, &r.out.layout, &r.cfg, &mut rng).unwrap();
        let ok = p.mean_sigma > 0.5 && p.auc > 0.8;
        good += usize::from(ok);
        println!(
            "    seed {}: {} masked, mean sigma {:.3} (non-edges {:.3}), AUC {:.3}",
            r.seed, p.masked, p.mean_sigma, p.mean_sigma_negative, p.auc
        );
    }
    let pass = good >= 4;
    report(7, pass, &format!("{good}/5 seeds with mean sigma > 0.5 and AUC > 0.8"));
    assert!(pass);
}

fn criterion_08_ablation_direction() {
    let cfg = TrainConfig::toy();
    let inverse = cfg.inverse_relations;
    let rep = ablate(&cfg, &Variant::ALL, &SEEDS, |s| generate_toy(&ToyConfig::default(), s, inverse)).unwrap();
    let table = rep.to_table();
    print!("{table}");
    let full = rep.row(Variant::Full).unwrap();
    let no_mae = rep.row(Variant::NoMae).unwrap();
    let pass = full.recall.mean >= no_mae.recall.mean - no_mae.recall.std && !table.is_empty();
    report(
        8,
        pass,
        &format!(
            "full {:.4} vs no_mae {:.4} - 1 sd {:.4} over 5 seeds",
            full.recall.mean, no_mae.recall.mean, no_mae.recall.std
        ),
    );
    assert!(pass);
}

fn criterion_09_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = generate_toy(&ToyConfig::default(), 9, true).unwrap();
    let mut cfg = toy_cfg(9);
    cfg.epochs = 10;
    cfg.workers = 2;
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_training::<f32>(&ds, &cfg, Some(&a), None).unwrap();
    run_training::<f32>(&ds, &cfg, Some(&b), None).unwrap();
    let la = std::fs::read(a.join(METRICS_LOG)).unwrap();
    let lb = std::fs::read(b.join(METRICS_LOG)).unwrap();
    let records = read_metrics_log(a.join(METRICS_LOG)).unwrap();
    let bound_ok = records.iter().all(|r| r["lc_bound_ok"] == serde_json::Value::Bool(true));
    let pass = la == lb && records.len() == 11 && records.last().unwrap()["epoch"] == 10 && bound_ok;
    report(9, pass, &format!("two 10-epoch runs, {} log lines, {} bytes each, identical: {}", records.len(), la.len(), la == lb));
    assert!(pass);
}

fn criterion_10_explainability() {
    // untrained: default toy dims and a 64-wide model
    let mut worst_untrained = 0.0f64;
    for (seed, dim) in [(1u64, 32usize), (2, 64)] {
        let ds = generate_toy(&ToyConfig::default(), seed, true).unwrap();
        let ctx = TrainContext::<f32>::from_dataset(&ds);
        let (store, layout) = ParamLayout::init::<f32, _>(&ctx.dims(dim), false, &mut stream_rng(seed, Stream::Init, 0));
        let r = rationale_report(&ds.kg, &store, &layout, None, None);
        worst_untrained = r.rows.iter().map(|x| (x.mean_gamma - 1.0).abs()).fold(worst_untrained, f64::max);
    }

    let runs = toy_runs();
    let mut planted_top = 0;
    for r in &runs.runs {
        let rep = rationale_report(&r.ds.kg, &r.out.best, &r.out.layout, r.ds.relation_names.as_deref(), None);
        let top = rep.top_relation();
        planted_top += usize::from(top == Some(PLANTED_RELATION));
        let row = &rep.rows[0];
        println!("    seed {}: top relation {} (mean gamma {:.4})", r.seed, row.name, row.mean_gamma);
    }
    let pass = worst_untrained <= 1e-3 && planted_top >= 4;
    report(
        10,
        pass,
        &format!("untrained max |mean gamma - 1| = {worst_untrained:.2e}; planted relation ranked first in {planted_top}/5 seeds"),
    );
    assert!(pass);
}

fn main() {
    let checks: [(usize, fn()); 10] = [
        (1, criterion_01_gradients_match_finite_differences),
        (2, criterion_02_sparse_kernels_match_dense_oracles),
        (3, criterion_03_rationale_invariants),
        (4, criterion_04_metric_oracles),
        (5, criterion_05_loss_point_values_and_bound),
        (6, criterion_06_end_to_end_learning),
        (7, criterion_07_reconstruction_signal),
        (8, criterion_08_ablation_direction),
        (9, criterion_09_determinism),
        (10, criterion_10_explainability),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, check) in checks {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        if std::panic::catch_unwind(check).is_err() {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
