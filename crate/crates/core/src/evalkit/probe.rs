use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;

use crate::diffkernel::{Matrix, ParamStore, Tape};
use crate::error::{KgError, Result};
use crate::model::{KgView, ParamLayout, ViewKind};
use crate::rationale::{gumbel_perturb, score_all, select_mask_set, uniform_subset, Selection};
use crate::scalar::{sigmoid, Scalar};
use crate::trainer::{TrainConfig, TrainContext};

/// How well masked triplets are recovered from an encoding that never saw them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconstructionReport {
    /// Mean `sigma(e_h . (e_t ⊙ e_r))` over the masked triplets.
    pub mean_sigma: f64,
    /// Mean score of the random non-edges.
    pub mean_sigma_negative: f64,
    /// Probability a masked triplet outscores a random non-edge (ties count half).
    pub auc: f64,
    pub masked: usize,
}

/// Mann-Whitney AUC of `pos` against `neg`.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average ranks over ties
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum_pos += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

fn triplet_score<T: Scalar>(ent: &Matrix<T>, rel: &Matrix<T>, h: usize, r: usize, t: usize) -> f64 {
    let (eh, et, er) = (ent.row(h), ent.row(t), rel.row(r));
    let s = (0..eh.len()).fold(T::zero(), |acc, k| acc + eh[k] * et[k] * er[k]);
    sigmoid(s).as_f64()
}

/// Draws a mask set the way training does, encodes the masked graph, and
/// scores the hidden triplets against as many uniformly drawn non-edges.
pub fn reconstruction_probe<T: Scalar, R: Rng + ?Sized>(
    ctx: &TrainContext<T>,
    store: &ParamStore<T>,
    layout: &ParamLayout,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ReconstructionReport> {
    let kg = &ctx.kg;
    let rc = &cfg.rationale;
    if rc.k_m == 0 {
        return Err(KgError::Undefined("reconstruction probe needs k_m > 0".into()));
    }
    let mask = match rc.mask_selection {
        Selection::Rationale => {
            let scores = score_all(kg, store, layout);
            let g = if rc.gumbel {
                gumbel_perturb(&scores.gamma, rng)
            } else {
                scores.gamma
            };
            select_mask_set(&g, rc.k_m)?
        }
        Selection::Random => {
            if rc.k_m > kg.num_triplets() {
                return Err(KgError::Config(format!("k_m exceeds triplet count ({} > {})", rc.k_m, kg.num_triplets())));
            }
            uniform_subset(kg.num_triplets(), rc.k_m, rng)
                .into_iter()
                .map(crate::graphstore::TripletId)
                .collect()
        }
    };
    let view = KgView::excluding(kg, &mask, ViewKind::MaskedKg);
    let mut tape = Tape::new();
    let p = layout.load(&mut tape, store);
    let (_, e) = crate::trainer::encode_main_on_tape(&mut tape, &p, &view, &ctx.user_op, cfg);
    let ent = tape.value(e);
    let rel = tape.value(p.relation);

    let pos: Vec<f64> = mask
        .iter()
        .map(|&id| {
            let t = kg.triplet(id);
            triplet_score(ent, rel, t.head, t.relation, t.tail)
        })
        .collect();
    let edges: HashSet<(usize, usize, usize)> = kg.triplets().iter().map(|t| (t.head, t.relation, t.tail)).collect();
    let (ne, nr) = (kg.num_entities(), kg.num_relations());
    let mut neg = Vec::with_capacity(pos.len());
    let mut tries = 0usize;
    while neg.len() < pos.len() {
        tries += 1;
        if tries > 1000 * pos.len() + 1000 {
            return Err(KgError::Undefined("knowledge graph too dense to sample non-edges".into()));
        }
        let (h, r, t) = (rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne));
        if !edges.contains(&(h, r, t)) {
            neg.push(triplet_score(ent, rel, h, r, t));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ReconstructionReport {
        mean_sigma: mean(&pos),
        mean_sigma_negative: mean(&neg),
        auc: auc(&pos, &neg),
        masked: pos.len(),
    })
}
