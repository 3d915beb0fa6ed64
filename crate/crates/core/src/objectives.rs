//! Losses (masked reconstruction, cross-view contrast, BPR, their weighted
//! sum) and the alignment / uniformity diagnostics.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffkernel::{dot, logsumexp, Matrix, Tape, Var};
use crate::error::{KgError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    /// Count the positive term once per candidate in the denominator, as the
    /// formula is printed, instead of the usual InfoNCE form.
    pub literal_infonce_denominator: bool,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.1,
            lambda2: 0.01,
            tau: 0.2,
            literal_infonce_denominator: false,
            reduction: Reduction::Sum,
        }
    }
}

fn reduce<T: Scalar>(tape: &mut Tape<T>, per_row: Var, reduction: Reduction) -> Var {
    let n = tape.value(per_row).rows();
    let s = tape.sum(per_row);
    match reduction {
        Reduction::Sum => s,
        Reduction::Mean => tape.scale(s, T::one() / T::of_usize(n.max(1))),
    }
}

/// `sum -ln sigma(e_h . (e_t ⊙ e_r))` over the masked triplets, with `e_h`,
/// `e_t` taken from `entity_out` and `e_r` from `relation`.
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    entity_out: Var,
    relation: Var,
    triplets: &[(usize, usize, usize)],
    reduction: Reduction,
) -> Var {
    if triplets.is_empty() {
        return tape.input(Matrix::scalar(T::zero()));
    }
    let heads: Arc<[usize]> = triplets.iter().map(|t| t.0).collect();
    let rels: Arc<[usize]> = triplets.iter().map(|t| t.1).collect();
    let tails: Arc<[usize]> = triplets.iter().map(|t| t.2).collect();
    let eh = tape.gather(entity_out, heads);
    let et = tape.gather(entity_out, tails);
    let er = tape.gather(relation, rels);
    let tr = tape.mul(et, er);
    let logits = tape.row_dot(eh, tr);
    let ls = tape.log_sigmoid(logits);
    let neg = tape.scale(ls, -T::one());
    reduce(tape, neg, reduction)
}

/// `sum -ln sigma(pos - neg)` over paired score columns.
pub fn bpr_loss<T: Scalar>(tape: &mut Tape<T>, pos: Var, neg: Var, reduction: Reduction) -> Var {
    if tape.value(pos).rows() == 0 {
        return tape.input(Matrix::scalar(T::zero()));
    }
    let margin = tape.sub(pos, neg);
    let ls = tape.log_sigmoid(margin);
    let n = tape.scale(ls, -T::one());
    reduce(tape, n, reduction)
}

/// Two distinct in-batch negatives `(v', v'')` per position, both different
/// from the position itself.
pub fn sample_contrastive_negatives<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if n < 3 {
        return Err(KgError::Config(format!(
            "contrastive batch needs at least 3 items, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| {
            // draw from the n - 1 others, then from the n - 2 left
            let mut a = rng.gen_range(0..n - 1);
            if a >= i {
                a += 1;
            }
            let (lo, hi) = if a < i { (a, i) } else { (i, a) };
            let mut b = rng.gen_range(0..n - 2);
            if b >= lo {
                b += 1;
            }
            if b >= hi {
                b += 1;
            }
            (a, b)
        })
        .collect())
}

/// Per-item InfoNCE over cosine similarities with two negatives:
/// `-s+/tau + ln(exp(s+/tau) + exp(s'/tau) + exp(s''/tau))`, where `s'` is the
/// similarity of the negative's CF-view vector to the item's KG-view vector.
///
/// `z_u` and `z_k` are the projected CF and KG views, row `i` being item
/// `batch[i]`. Returns the reduced loss and the realised similarities.
pub fn contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z_u: Var,
    z_k: Var,
    batch: &[usize],
    negatives: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<(Var, ContrastiveSims)> {
    if batch.len() < 3 {
        return Err(KgError::Config(format!(
            "contrastive batch needs at least 3 items, got {}",
            batch.len()
        )));
    }
    assert_eq!(batch.len(), negatives.len());
    let idx: Arc<[usize]> = batch.into();
    let u = tape.gather(z_u, idx.clone());
    let k = tape.gather(z_k, idx);
    let u = tape.row_normalize(u);
    let k = tape.row_normalize(k);
    let pos = tape.row_dot(u, k);
    let n1 = tape.gather(u, negatives.iter().map(|p| p.0).collect::<Arc<[usize]>>());
    let n2 = tape.gather(u, negatives.iter().map(|p| p.1).collect::<Arc<[usize]>>());
    let s1 = tape.row_dot(n1, k);
    let s2 = tape.row_dot(n2, k);
    let inv_tau = T::one() / T::of(cfg.tau);
    let pos_logit = tape.scale(pos, inv_tau);
    let first = if cfg.literal_infonce_denominator {
        // sum over j in {v, v', v''} of (e^{s+} + e^{s_j}) = 4 e^{s+} + e^{s'} + e^{s''}
        tape.add_const(pos_logit, T::of(4f64.ln()))
    } else {
        pos_logit
    };
    let l1 = tape.scale(s1, inv_tau);
    let l2 = tape.scale(s2, inv_tau);
    let logits = tape.concat_cols(&[first, l1, l2]);
    let lse = tape.row_logsumexp(logits);
    let per_item = tape.sub(lse, pos_logit);
    let sims = ContrastiveSims {
        positive: tape.value(pos).as_slice().iter().map(|x| x.as_f64()).collect(),
        negative: tape
            .value(s1)
            .as_slice()
            .iter()
            .zip(tape.value(s2).as_slice())
            .map(|(a, b)| [a.as_f64(), b.as_f64()])
            .collect(),
        per_item: tape.value(per_item).as_slice().iter().map(|x| x.as_f64()).collect(),
    };
    Ok((reduce(tape, per_item, cfg.reduction), sims))
}

/// Similarities behind one contrastive evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSims {
    pub positive: Vec<f64>,
    pub negative: Vec<[f64; 2]>,
    pub per_item: Vec<f64>,
}

impl ContrastiveSims {
    /// Largest `bound - loss` over items; `<= 0` (up to rounding) when the
    /// lower bound reached at perfect alignment holds everywhere.
    pub fn worst_bound_violation(&self, tau: f64) -> f64 {
        self.per_item
            .iter()
            .zip(&self.negative)
            .map(|(&l, n)| contrastive_lower_bound(n, tau) - l)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scalar per-item loss, standard or literal denominator.
pub fn contrastive_item_loss(pos: f64, negs: &[f64], tau: f64, literal: bool) -> f64 {
    let mut logits = vec![pos / tau + if literal { 4f64.ln() } else { 0.0 }];
    logits.extend(negs.iter().map(|s| s / tau));
    logsumexp(&logits) - pos / tau
}

/// `-1/tau + ln(e^{1/tau} + sum_i e^{s_i/tau})`: the per-item loss at
/// perfect alignment for the realised negative similarities.
pub fn contrastive_lower_bound(negs: &[f64], tau: f64) -> f64 {
    let mut logits = vec![1.0 / tau];
    logits.extend(negs.iter().map(|s| s / tau));
    logsumexp(&logits) - 1.0 / tau
}

/// One step's loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_rec: f64,
    pub l_m: f64,
    pub l_c: f64,
    /// Explicit penalty; zero here because decay is applied inside Adam.
    pub l2: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_m, self.l_c, self.l2, self.total].iter().all(|x| x.is_finite())
    }
}

impl std::fmt::Display for LossBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "l_rec={:.6} l_m={:.6} l_c={:.6} l2={:.6} total={:.6}",
            self.l_rec, self.l_m, self.l_c, self.l2, self.total
        )
    }
}

pub fn joint_loss(l_rec: f64, l_m: f64, l_c: f64, l2: f64, cfg: &LossConfig) -> LossBundle {
    LossBundle {
        l_rec,
        l_m,
        l_c,
        l2,
        total: l_rec + cfg.lambda1 * l_m + cfg.lambda2 * l_c + l2,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        tau: cfg.tau,
    }
}

/// Tape version of [`joint_loss`]; the value equals the bundle's total.
pub fn joint_loss_var<T: Scalar>(tape: &mut Tape<T>, l_rec: Var, l_m: Var, l_c: Var, cfg: &LossConfig) -> Var {
    let m = tape.scale(l_m, T::of(cfg.lambda1));
    let c = tape.scale(l_c, T::of(cfg.lambda2));
    let a = tape.add(l_rec, m);
    tape.add(a, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AUReport {
    pub alignment: f64,
    pub uniformity: f64,
    pub positive_pairs: usize,
    pub uniformity_pairs: usize,
}

fn normalized_rows<T: Scalar>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| {
            let row: Vec<f64> = m.row(r).iter().map(|x| x.as_f64()).collect();
            let n = dot(&row, &row).sqrt().max(1e-12);
            row.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Alignment `mean ||x - y||^2` over row pairs of `x`, `y`, and uniformity
/// `ln mean exp(-2 ||a - b||^2)` over all distinct row pairs of `all`. Rows
/// are L2-normalised first.
pub fn alignment_uniformity<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, all: &Matrix<T>) -> Result<AUReport> {
    if x.rows() < 2 || all.rows() < 2 {
        return Err(KgError::Undefined(format!(
            "alignment/uniformity need at least 2 samples (got {} pairs, {} points)",
            x.rows(),
            all.rows()
        )));
    }
    assert_eq!(x.shape(), y.shape());
    let (xs, ys) = (normalized_rows(x), normalized_rows(y));
    let alignment = xs.iter().zip(&ys).map(|(a, b)| sq_dist(a, b)).sum::<f64>() / xs.len() as f64;
    let pts = normalized_rows(all);
    let mut terms = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            terms.push(-2.0 * sq_dist(&pts[i], &pts[j]));
        }
    }
    let uniformity = logsumexp(&terms) - (terms.len() as f64).ln();
    Ok(AUReport {
        alignment,
        uniformity,
        positive_pairs: xs.len(),
        uniformity_pairs: terms.len(),
    })
}
