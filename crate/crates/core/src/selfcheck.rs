//! Built-in oracle suites: finite-difference gradients, sparse against dense
//! propagation, ranking metrics against a naive sort, and the rationale
//! softmax / top-k invariants.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::diffkernel::{grad_check, GradCheckReport, Matrix, ParamStore, Tape};
use crate::error::{KgError, Result};
use crate::evalkit::{aggregate, per_user_metrics, score_ranking};
use crate::graphstore::{Dataset, InteractionGraph, KnowledgeGraph, Triplet, TripletId};
use crate::model::{attention_weights, kg_aggregate, lightgcn_encode, user_aggregate, KgView, ModelDims, ParamLayout, UiView, ViewKind};
use crate::oracle::{dense_kg_layers, dense_lightgcn, dense_user_layers, max_abs_diff, naive_rank_metrics, sort_bottom_k, sort_top_k};
use crate::rationale::{noise_set_size, normalize_scores, select_mask_set, select_noise_set, RationaleConfig, RationaleState};
use crate::rng::{stream_rng, KgRng, Stream};
use crate::toy::{generate_toy, ToyConfig};
use crate::trainer::{forward, StepPlan, TrainConfig, TrainContext};

/// Tolerance for analytic against central-difference gradients.
pub const GRAD_TOL: f64 = 1e-4;
/// Tolerance for sparse against dense propagation.
pub const DENSE_TOL: f64 = 1e-8;
/// Tolerance for metrics against the naive oracle.
pub const METRIC_TOL: f64 = 1e-12;
/// Random instances per property suite.
pub const CASES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Gradcheck,
    SparseDense,
    Metrics,
    SoftmaxTopk,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradcheck, Suite::SparseDense, Suite::Metrics, Suite::SoftmaxTopk];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::SparseDense => "sparse_dense",
            Suite::Metrics => "metrics",
            Suite::SoftmaxTopk => "softmax_topk",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == norm)
            .ok_or_else(|| KgError::Config(format!("suite: unknown suite {s:?}")))
    }
}

/// Deliberate defects for testing that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the analytic entity-embedding gradient by 1.01.
    GradientBug,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub suite: Suite,
    pub cases: usize,
    pub failures: Vec<String>,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Rec,
    Mask,
    Contrast,
    Joint,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Rec, LossTerm::Mask, LossTerm::Contrast, LossTerm::Joint];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Rec => "l_rec",
            LossTerm::Mask => "l_m",
            LossTerm::Contrast => "l_c",
            LossTerm::Joint => "joint",
        }
    }
}

/// The gradient-check instance: 10 users, 20 entities, `d = 8`.
pub fn gradient_instance(seed: u64) -> Result<(Dataset, TrainConfig)> {
    let ds = generate_toy(&ToyConfig::tiny(), seed, true)?;
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.precision = crate::trainer::Precision::F64;
    cfg.batch_size = 8;
    cfg.model.dim = 8;
    cfg.model.layers = 2;
    cfg.rationale.k_m = 4;
    cfg.rationale.rho_k = 0.25;
    cfg.rationale.rho_u = 2;
    cfg.loss.lambda1 = 0.5;
    cfg.loss.lambda2 = 0.5;
    Ok((ds, cfg))
}

/// Finite-difference check of each loss term at initial parameters on a
/// fixed step plan.
pub fn gradcheck_terms(seed: u64, fault: Option<Fault>) -> Result<Vec<(LossTerm, GradCheckReport)>> {
    let (ds, cfg) = gradient_instance(seed)?;
    let ctx = TrainContext::<f64>::from_dataset(&ds);
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let (mut store, layout) = ParamLayout::init::<f64, _>(&ctx.dims(cfg.model.dim), false, &mut rng);
    // Xavier attention weights leave f near zero and its gradients near the
    // finite-difference noise floor; check at a point where attention matters.
    for id in [layout.attn_q, layout.attn_k] {
        let (r, c) = store.tensor(id).shape();
        *store.tensor_mut(id) = random_matrix(r, c, &mut rng);
    }
    let plan = StepPlan::sample(&ctx, &store, &layout, &cfg, &mut stream_rng(seed, Stream::Step, 0))?;
    let mut out = Vec::new();
    for term in LossTerm::ALL {
        let loss = |s: &ParamStore<f64>| {
            let f = forward(&ctx, s, &layout, &plan, &cfg).expect("forward on a valid plan");
            let v = match term {
                LossTerm::Rec => f.l_rec,
                LossTerm::Mask => f.l_m,
                LossTerm::Contrast => f.l_c,
                LossTerm::Joint => f.loss,
            };
            let g = f.tape.backward(v);
            let mut grads = f.tape.param_grads(&g, s);
            if fault == Some(Fault::GradientBug) {
                if let Some(m) = grads.get(layout.entity).map(|m| m.map(|x| x * 1.01)) {
                    grads.set(layout.entity, m);
                }
            }
            (f.tape.value(v).item(), grads)
        };
        out.push((term, grad_check(&store, loss, GRAD_TOL, None)));
    }
    Ok(out)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut KgRng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random KG with at most `max_entities` entities.
pub fn random_kg(rng: &mut KgRng, max_entities: usize) -> KnowledgeGraph {
    let ne = rng.gen_range(2..=max_entities);
    let nr = rng.gen_range(1..=3);
    let nt = rng.gen_range(1..=2 * ne);
    let trip = (0..nt)
        .map(|_| Triplet::new(rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne)))
        .collect();
    KnowledgeGraph::new(ne, nr, trip, rng.gen_bool(0.5)).expect("random triplets are in range")
}

/// Random interaction graph; some users and items may be isolated.
pub fn random_interactions(rng: &mut KgRng, users: usize, items: usize) -> InteractionGraph {
    let mut edges = Vec::new();
    for u in 0..users {
        for v in 0..items {
            if rng.gen_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    InteractionGraph::from_edges(users, items, edges).expect("edges are in range")
}

/// One sparse-against-dense comparison; returns the largest deviation.
pub fn sparse_dense_case(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::Toy, 7);
    // nodes: entities <= 30, users + items <= 50
    let kg = random_kg(&mut rng, 30);
    let ne = kg.num_entities();
    let ni = rng.gen_range(1..=ne.min(20));
    let nu = rng.gen_range(1..=10);
    let ui = random_interactions(&mut rng, nu, ni);
    let dims = ModelDims {
        num_users: nu,
        num_items: ni,
        num_entities: ne,
        num_relations: kg.num_relations(),
        dim: 4,
    };
    let (mut store, layout) = ParamLayout::init::<f64, _>(&dims, false, &mut rng);
    for id in [layout.entity, layout.relation, layout.user, layout.attn_q, layout.attn_k] {
        let (r, c) = store.tensor(id).shape();
        *store.tensor_mut(id) = random_matrix(r, c, &mut rng);
    }
    let excluded: Vec<TripletId> = (0..kg.num_triplets()).filter(|_| rng.gen_bool(0.25)).map(TripletId).collect();
    let view = KgView::excluding(&kg, &excluded, ViewKind::MaskedKg);
    let drop: Vec<usize> = (0..ui.num_edges()).filter(|_| rng.gen_bool(0.2)).collect();
    let uiv = UiView::excluding(&ui, &drop, ViewKind::AugmentedUi);
    let layers = rng.gen_range(1..=3);

    let mut tape = Tape::new();
    let p = layout.load(&mut tape, &store);
    let omega = attention_weights(&mut tape, &p, &view);
    let ents = kg_aggregate(&mut tape, &p, &view, omega, layers);
    let op = Arc::new(uiv.user_mean_operator::<f64>(ne));
    let users = user_aggregate(&mut tape, p.user, &ents, &op);
    let item0 = crate::model::prefix_rows(&mut tape, p.entity, ni);
    let adj = Arc::new(uiv.normalized_adjacency::<f64>());
    let include0 = rng.gen_bool(0.5);
    let (xu, xv) = lightgcn_encode(&mut tape, p.user, item0, &adj, layers, include0);

    let trip: Vec<(usize, usize, usize)> = (0..view.len()).map(|i| (view.heads[i], view.relations[i], view.tails[i])).collect();
    let ent = store.tensor(layout.entity);
    let d_ents = dense_kg_layers(ent, store.tensor(layout.relation), store.tensor(layout.attn_q), store.tensor(layout.attn_k), &trip, layers);
    let d_users = dense_user_layers(store.tensor(layout.user), &d_ents, &uiv.edges);
    let item_rows: Vec<usize> = (0..ni).collect();
    let (du, dv) = dense_lightgcn(store.tensor(layout.user), &ent.gather_rows(&item_rows), &uiv.edges, layers, include0);

    let mut worst = 0.0f64;
    for (s, d) in ents.iter().zip(&d_ents).chain(users.iter().zip(&d_users)) {
        worst = worst.max(max_abs_diff(tape.value(*s), d));
    }
    worst = worst.max(max_abs_diff(tape.value(xu), &du)).max(max_abs_diff(tape.value(xv), &dv));
    Ok(worst)
}

/// One metric comparison on a random instance of at most 30 users and 40
/// items; returns the largest deviation.
pub fn metrics_case(seed: u64) -> f64 {
    let mut rng = stream_rng(seed, Stream::Toy, 11);
    let nu = rng.gen_range(1..=30);
    let ni = rng.gen_range(2..=40);
    let n = *[1usize, 5, 20].get(rng.gen_range(0..3)).unwrap();
    // coarse scores so ties occur
    let scores: Vec<Vec<f64>> = (0..nu)
        .map(|_| (0..ni).map(|_| (rng.gen_range(0.0..1.0f64) * 8.0).floor()).collect())
        .collect();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for u in 0..nu {
        for v in 0..ni {
            match rng.gen_range(0..10) {
                0..=1 => tr.push((u, v)),
                2 => te.push((u, v)),
                _ => {}
            }
        }
    }
    let train = InteractionGraph::from_edges(nu, ni, tr).unwrap();
    let test = InteractionGraph::from_edges(nu, ni, te).unwrap();
    let per_user = per_user_metrics(|u| scores[u].clone(), nu, &train, &test, n);
    let got = aggregate(&per_user, n);
    let trs: Vec<Vec<usize>> = (0..nu).map(|u| train.items_of(u).to_vec()).collect();
    let tes: Vec<Vec<usize>> = (0..nu).map(|u| test.items_of(u).to_vec()).collect();
    let (r, g, k) = naive_rank_metrics(&scores, &trs, &tes, n);
    if k != got.users_evaluated {
        return f64::INFINITY;
    }
    (r - got.recall).abs().max((g - got.ndcg).abs())
}

/// Rationale invariants on one random KG; returns the failed checks.
pub fn softmax_topk_case(seed: u64) -> Result<Vec<String>> {
    let mut rng = stream_rng(seed, Stream::Toy, 13);
    let kg = random_kg(&mut rng, 30);
    let t = kg.num_triplets();
    let trip = kg.triplets();
    let f: Vec<f64> = (0..t).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let s = normalize_scores(&kg, f.clone());
    let mut bad = Vec::new();

    let mut sums = vec![0.0; kg.num_entities()];
    let mut deg = vec![0usize; kg.num_entities()];
    for (i, x) in trip.iter().enumerate() {
        sums[x.head] += s.omega[i];
        deg[x.head] += 1;
    }
    for h in 0..kg.num_entities() {
        if deg[h] > 0 && (sums[h] - 1.0).abs() > 1e-6 {
            bad.push(format!("head {h}: sum omega = {}", sums[h]));
        }
    }
    for (i, x) in trip.iter().enumerate() {
        if (s.gamma[i] - deg[x.head] as f64 * s.omega[i]).abs() > 1e-12 {
            bad.push(format!("triplet {i}: gamma != |N_h| omega"));
        }
    }

    let per_head: Vec<f64> = (0..kg.num_entities()).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let uniform = normalize_scores(&kg, trip.iter().map(|x| per_head[x.head]).collect());
    if uniform.gamma.iter().any(|g| (g - 1.0).abs() > 1e-12) {
        bad.push("uniform head scores do not give gamma = 1".into());
    }

    let k_m = rng.gen_range(0..=t);
    let mask: Vec<usize> = select_mask_set(&s.gamma, k_m)?.into_iter().map(|x| x.0).collect();
    if mask != sort_top_k(&s.gamma, k_m) {
        bad.push(format!("mask set differs from sort oracle (k_m = {k_m})"));
    }
    let rho_k: f64 = rng.gen_range(0.0..1.0);
    let noise: Vec<usize> = select_noise_set(&s.gamma, rho_k)?.into_iter().map(|x| x.0).collect();
    if noise != sort_bottom_k(&s.gamma, noise_set_size(rho_k, t)) {
        bad.push(format!("noise set differs from sort oracle (rho_k = {rho_k})"));
    }

    let shifted = normalize_scores(&kg, trip.iter().zip(&f).map(|(x, v)| v + per_head[x.head]).collect());
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    if !close(&s.omega, &shifted.omega) || !close(&s.gamma, &shifted.gamma) {
        bad.push("per-head shift changed omega or gamma".into());
    }
    let mask_shifted: Vec<usize> = select_mask_set(&shifted.gamma, k_m)?.into_iter().map(|x| x.0).collect();
    if mask_shifted != mask {
        bad.push("per-head shift changed the mask set".into());
    }

    let ne = kg.num_entities();
    let ui = random_interactions(&mut rng, 5, ne.min(10));
    if ui.num_edges() > 1 {
        let cfg = RationaleConfig {
            k_m,
            rho_k,
            rho_u: rng.gen_range(0..ui.num_edges()),
            ..RationaleConfig::default()
        };
        let st = RationaleState::derive(&kg, &ui, s.clone(), &cfg, &mut rng)?;
        if st.mask_set.len() != k_m {
            bad.push(format!("|M_k| = {} != k_m = {k_m}", st.mask_set.len()));
        }
        if st.kg_noise_set.len() != (rho_k * t as f64).floor() as usize {
            bad.push(format!("|S_k| = {} != floor(rho_k T)", st.kg_noise_set.len()));
        }
        if st.ui_drop_set.len() != cfg.rho_u {
            bad.push(format!("|S_u| = {} != rho_u = {}", st.ui_drop_set.len(), cfg.rho_u));
        }
    }
    Ok(bad)
}

fn gradcheck_suite(fault: Option<Fault>) -> (usize, Vec<String>) {
    let mut failures = Vec::new();
    let mut cases = 0;
    for seed in [1u64, 2] {
        match gradcheck_terms(seed, fault) {
            Ok(reports) => {
                for (term, r) in reports {
                    cases += 1;
                    if !r.passed {
                        failures.push(format!("seed {seed} {}: worst relative error {:.3e}", term.name(), r.worst()));
                    }
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    (cases, failures)
}

fn per_seed(check: impl Fn(u64) -> std::result::Result<(), String>) -> (usize, Vec<String>) {
    let failures: Vec<String> = (0..CASES).filter_map(|s| check(s).err().map(|e| format!("seed {s}: {e}"))).collect();
    (CASES as usize, failures)
}

/// Runs one suite, with an optional injected fault.
pub fn run_suite(suite: Suite, fault: Option<Fault>) -> SuiteResult {
    let start = Instant::now();
    let (cases, failures) = match suite {
        Suite::Gradcheck => gradcheck_suite(fault),
        Suite::SparseDense => per_seed(|s| match sparse_dense_case(s) {
            Ok(d) if d <= DENSE_TOL => Ok(()),
            Ok(d) => Err(format!("max deviation {d:.3e}")),
            Err(e) => Err(e.to_string()),
        }),
        Suite::Metrics => {
            let (mut cases, mut failures) = per_seed(|s| {
                let d = metrics_case(s);
                if d <= METRIC_TOL {
                    Ok(())
                } else {
                    Err(format!("max deviation {d:.3e}"))
                }
            });
            let (_, ndcg) = score_ranking(&[5, 7], &[7], 20);
            cases += 1;
            if (ndcg - 0.630930).abs() > 1e-6 {
                failures.push(format!("single hit at rank 2: ndcg {ndcg}"));
            }
            (cases, failures)
        }
        Suite::SoftmaxTopk => per_seed(|s| match softmax_topk_case(s) {
            Ok(b) if b.is_empty() => Ok(()),
            Ok(b) => Err(b.join("; ")),
            Err(e) => Err(e.to_string()),
        }),
    };
    SuiteResult {
        suite,
        cases,
        failures,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_suites(suites: &[Suite], fault: Option<Fault>) -> Vec<SuiteResult> {
    suites.iter().map(|&s| run_suite(s, fault)).collect()
}
