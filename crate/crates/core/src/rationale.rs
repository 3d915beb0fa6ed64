//! Triplet rationale scores and the per-step sets derived from them: the
//! masked set, the knowledge noise set, item noise scores and the
//! interaction dropout set.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffkernel::{segment_softmax, Matrix, ParamStore};
use crate::error::{KgError, Result};
use crate::graphstore::{InteractionGraph, KnowledgeGraph, TripletId};
use crate::model::ParamLayout;
use crate::scalar::Scalar;

/// Lower clamp on the uniform draw inside the Gumbel transform.
pub const GUMBEL_EPS: f64 = 1e-12;

/// How a triplet or edge set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Driven by (noisy) rationale scores.
    #[default]
    Rationale,
    /// Uniform at random, same size.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RationaleConfig {
    /// Number of triplets masked each step.
    pub k_m: usize,
    /// Fraction of triplets dropped from the contrastive knowledge view.
    pub rho_k: f64,
    /// Number of interaction edges dropped from the contrastive CF view.
    pub rho_u: usize,
    /// Add Gumbel noise to the global scores before selection.
    pub gumbel: bool,
    /// Use `softmax(phi)` for dropout probabilities instead of `softmax(-phi)`.
    pub literal_phi_softmax: bool,
    pub mask_selection: Selection,
    pub augment_selection: Selection,
}

impl Default for RationaleConfig {
    fn default() -> Self {
        RationaleConfig {
            k_m: 256,
            rho_k: 0.5,
            rho_u: 512,
            gumbel: true,
            literal_phi_softmax: false,
            mask_selection: Selection::Rationale,
            augment_selection: Selection::Rationale,
        }
    }
}

/// Raw, head-local and global rationale scores, indexed by triplet id.
#[derive(Debug, Clone, PartialEq)]
pub struct RationaleScores<T> {
    pub f: Vec<T>,
    pub omega: Vec<T>,
    pub gamma: Vec<T>,
}

/// Head-local softmax of `f` over each head's neighbourhood, in triplet-id
/// order, and the global score `gamma = |N_h| * omega`.
pub fn normalize_scores<T: Scalar>(kg: &KnowledgeGraph, f: Vec<T>) -> RationaleScores<T> {
    assert_eq!(f.len(), kg.num_triplets());
    let order: Vec<usize> = kg.head_edges().iter().map(|e| e.id.0).collect();
    let in_csr: Vec<T> = order.iter().map(|&i| f[i]).collect();
    let w = segment_softmax(&in_csr, kg.head_offsets());
    let mut omega = vec![T::zero(); f.len()];
    for (&i, &x) in order.iter().zip(&w) {
        omega[i] = x;
    }
    let gamma = kg
        .triplets()
        .iter()
        .zip(&omega)
        .map(|(t, &w)| T::of_usize(kg.head_degree(t.head)) * w)
        .collect();
    RationaleScores { f, omega, gamma }
}

/// Scores every triplet with the current attention parameters.
pub fn score_all<T: Scalar>(kg: &KnowledgeGraph, params: &ParamStore<T>, layout: &ParamLayout) -> RationaleScores<T> {
    let ent = params.tensor(layout.entity);
    let rel = params.tensor(layout.relation);
    let q = ent.matmul(params.tensor(layout.attn_q));
    let k = ent.matmul(params.tensor(layout.attn_k));
    let scale = T::one() / T::of_usize(ent.cols()).sqrt();
    let f = kg
        .triplets()
        .iter()
        .map(|t| {
            let (qh, kt, er) = (q.row(t.head), k.row(t.tail), rel.row(t.relation));
            qh.iter()
                .zip(kt)
                .zip(er)
                .fold(T::zero(), |acc, ((&a, &b), &c)| acc + a * b * c)
                * scale
        })
        .collect();
    normalize_scores(kg, f)
}

/// `gamma - ln(-ln(eps))` with `eps ~ U(0, 1)` clamped to
/// `[GUMBEL_EPS, 1 - GUMBEL_EPS]`.
pub fn gumbel_perturb<T: Scalar, R: Rng + ?Sized>(gamma: &[T], rng: &mut R) -> Vec<T> {
    gamma.iter().map(|&g| g + T::of(gumbel_noise(rng))).collect()
}

/// One standard Gumbel draw.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let eps: f64 = rng.gen::<f64>().clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS);
    gumbel_transform(eps)
}

#[inline]
pub fn gumbel_transform(eps: f64) -> f64 {
    -(-eps.ln()).ln()
}

fn desc_then_index<T: Scalar>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .as_f64()
            .total_cmp(&scores[a].as_f64())
            .then(a.cmp(&b))
    }
}

fn asc_then_index<T: Scalar>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[a]
            .as_f64()
            .total_cmp(&scores[b].as_f64())
            .then(a.cmp(&b))
    }
}

fn first_k(n: usize, k: usize, cmp: impl Fn(&usize, &usize) -> Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < n {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Indices of the `k` largest scores (ties to the smaller index), ascending.
pub fn top_k_indices<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    first_k(scores.len(), k, desc_then_index(scores))
}

/// Indices of the `k` smallest scores (ties to the smaller index), ascending.
pub fn bottom_k_indices<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    first_k(scores.len(), k, asc_then_index(scores))
}

/// The masked set: the `k_m` triplets with the highest noisy global score.
pub fn select_mask_set<T: Scalar>(gamma_noisy: &[T], k_m: usize) -> Result<Vec<TripletId>> {
    if k_m > gamma_noisy.len() {
        return Err(KgError::Config(format!(
            "k_m exceeds triplet count ({k_m} > {})",
            gamma_noisy.len()
        )));
    }
    Ok(top_k_indices(gamma_noisy, k_m).into_iter().map(TripletId).collect())
}

/// Number of triplets dropped for ratio `rho_k`: `floor(rho_k * total)`.
pub fn noise_set_size(rho_k: f64, total: usize) -> usize {
    (rho_k * total as f64).floor() as usize
}

/// The knowledge noise set: the `floor(rho_k * T)` lowest noisy scores.
pub fn select_noise_set<T: Scalar>(gamma_noisy: &[T], rho_k: f64) -> Result<Vec<TripletId>> {
    if !(0.0..1.0).contains(&rho_k) {
        return Err(KgError::Config(format!("rho_k = {rho_k} outside [0, 1)")));
    }
    let k = noise_set_size(rho_k, gamma_noisy.len());
    Ok(bottom_k_indices(gamma_noisy, k).into_iter().map(TripletId).collect())
}

/// `phi_v`: mean noisy score over triplets with `v` as head or tail. Items
/// with no triplet get the global mean.
pub fn item_noise_scores<T: Scalar>(kg: &KnowledgeGraph, gamma_noisy: &[T], num_items: usize) -> Vec<T> {
    let mut sum = vec![T::zero(); num_items];
    let mut count = vec![0usize; num_items];
    for (t, &g) in kg.triplets().iter().zip(gamma_noisy) {
        if t.head < num_items {
            sum[t.head] = sum[t.head] + g;
            count[t.head] += 1;
        }
        if t.tail < num_items && t.tail != t.head {
            sum[t.tail] = sum[t.tail] + g;
            count[t.tail] += 1;
        }
    }
    let global = if gamma_noisy.is_empty() {
        T::zero()
    } else {
        gamma_noisy.iter().copied().sum::<T>() / T::of_usize(gamma_noisy.len())
    };
    sum.into_iter()
        .zip(count)
        .map(|(s, c)| if c == 0 { global } else { s / T::of_usize(c) })
        .collect()
}

/// Samples `rho_u` distinct interaction edges. Each edge carries its item's
/// probability `softmax(-phi)` (or `softmax(phi)` when `literal`),
/// renormalised over edges, and edges are drawn sequentially without
/// replacement. Implemented as Gumbel-top-k on the log-weights, which has the
/// same distribution as sequential draws. Returns ascending edge ids.
pub fn sample_ui_dropout<T: Scalar, R: Rng + ?Sized>(
    phi: &[T],
    interactions: &InteractionGraph,
    rho_u: usize,
    literal: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = interactions.num_edges();
    if rho_u == 0 {
        return Ok(Vec::new());
    }
    if rho_u >= n {
        return Err(KgError::Config(format!("rho_u = {rho_u} must be below the edge count {n}")));
    }
    let sign = if literal { 1.0 } else { -1.0 };
    let keys: Vec<f64> = interactions
        .edges()
        .iter()
        .map(|&(_, v)| sign * phi[v].as_f64() + gumbel_noise(rng))
        .collect();
    Ok(top_k_indices(&keys, rho_u))
}

/// `k` distinct ids out of `n`, uniformly, ascending.
pub fn uniform_subset<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut v = sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Everything rationalisation decides for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct RationaleState<T> {
    pub scores: RationaleScores<T>,
    pub gamma_noisy: Vec<T>,
    pub mask_set: Vec<TripletId>,
    pub kg_noise_set: Vec<TripletId>,
    pub phi: Vec<T>,
    pub ui_drop_set: Vec<usize>,
}

impl<T: Scalar> RationaleState<T> {
    /// Applies noise and selection to precomputed scores. One Gumbel draw is
    /// shared by the mask set, the noise set and `phi`.
    pub fn derive<R: Rng + ?Sized>(
        kg: &KnowledgeGraph,
        train: &InteractionGraph,
        scores: RationaleScores<T>,
        cfg: &RationaleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let t = kg.num_triplets();
        let gamma_noisy = if cfg.gumbel {
            gumbel_perturb(&scores.gamma, rng)
        } else {
            scores.gamma.clone()
        };
        let mask_set = match cfg.mask_selection {
            Selection::Rationale => select_mask_set(&gamma_noisy, cfg.k_m)?,
            Selection::Random => {
                if cfg.k_m > t {
                    return Err(KgError::Config(format!("k_m exceeds triplet count ({} > {t})", cfg.k_m)));
                }
                uniform_subset(t, cfg.k_m, rng).into_iter().map(TripletId).collect()
            }
        };
        let phi = item_noise_scores(kg, &gamma_noisy, train.num_items());
        let (kg_noise_set, ui_drop_set) = match cfg.augment_selection {
            Selection::Rationale => (
                select_noise_set(&gamma_noisy, cfg.rho_k)?,
                sample_ui_dropout(&phi, train, cfg.rho_u, cfg.literal_phi_softmax, rng)?,
            ),
            Selection::Random => {
                if !(0.0..1.0).contains(&cfg.rho_k) {
                    return Err(KgError::Config(format!("rho_k = {} outside [0, 1)", cfg.rho_k)));
                }
                if cfg.rho_u > 0 && cfg.rho_u >= train.num_edges() {
                    return Err(KgError::Config(format!(
                        "rho_u = {} must be below the edge count {}",
                        cfg.rho_u,
                        train.num_edges()
                    )));
                }
                let ks = uniform_subset(t, noise_set_size(cfg.rho_k, t), rng);
                let us = uniform_subset(train.num_edges(), cfg.rho_u, rng);
                (ks.into_iter().map(TripletId).collect(), us)
            }
        };
        Ok(RationaleState {
            scores,
            gamma_noisy,
            mask_set,
            kg_noise_set,
            phi,
            ui_drop_set,
        })
    }

    /// Dump of `(triplet, f, omega, gamma)` rows as tab-separated text.
    pub fn dump(&self, kg: &KnowledgeGraph) -> String {
        let mut out = String::from("id\thead\trelation\ttail\tf\tomega\tgamma\n");
        for (i, t) in kg.triplets().iter().enumerate() {
            out.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                t.head, t.relation, t.tail, self.scores.f[i], self.scores.omega[i], self.scores.gamma[i]
            ));
        }
        out
    }
}

/// Dense straight-line evaluation of `f`, `omega`, `gamma` for a handful of
/// triplets; used as an oracle, never by the training path.
pub fn dense_scores_oracle(
    triplets: &[(usize, usize, usize)],
    ent: &Matrix<f64>,
    rel: &Matrix<f64>,
    wq: &Matrix<f64>,
    wk: &Matrix<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = ent.cols();
    let f: Vec<f64> = triplets
        .iter()
        .map(|&(h, r, t)| {
            let mut acc = 0.0;
            for j in 0..d {
                let mut q = 0.0;
                let mut k = 0.0;
                for i in 0..d {
                    q += ent[(h, i)] * wq[(i, j)];
                    k += ent[(t, i)] * wk[(i, j)];
                }
                acc += q * k * rel[(r, j)];
            }
            acc / (d as f64).sqrt()
        })
        .collect();
    let mut omega = vec![0.0; f.len()];
    let mut gamma = vec![0.0; f.len()];
    for (i, &(h, _, _)) in triplets.iter().enumerate() {
        let same: Vec<usize> = (0..triplets.len()).filter(|&j| triplets[j].0 == h).collect();
        let denom: f64 = same.iter().map(|&j| f[j].exp()).sum();
        omega[i] = f[i].exp() / denom;
        gamma[i] = same.len() as f64 * omega[i];
    }
    (f, omega, gamma)
}
