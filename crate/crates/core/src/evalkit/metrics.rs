use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffkernel::{dot, Matrix};
use crate::graphstore::InteractionGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub n: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
    /// Users skipped because their test set is empty.
    pub users_skipped: usize,
}

impl RankingMetrics {
    pub fn to_kv(&self, prefix: &str) -> String {
        format!(
            "{prefix}.recall@{n} = {:.6}\n{prefix}.ndcg@{n} = {:.6}\n{prefix}.users_evaluated = {}\n{prefix}.users_skipped = {}\n",
            self.recall,
            self.ndcg,
            self.users_evaluated,
            self.users_skipped,
            n = self.n
        )
    }
}

/// Recall and NDCG of one user, or `None` when the test set is empty.
pub type UserMetrics = Option<(f64, f64)>;

/// `sum_{i < min(relevant, n)} 1 / log2(i + 2)`
pub fn ideal_dcg(relevant: usize, n: usize) -> f64 {
    (0..relevant.min(n)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum()
}

/// Metrics for one ranked list of candidate ids (best first).
pub fn score_ranking(ranked: &[usize], test: &[usize], n: usize) -> (f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (rank, v) in ranked.iter().take(n).enumerate() {
        if test.binary_search(v).is_ok() {
            hits += 1;
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    (hits as f64 / test.len() as f64, dcg / ideal_dcg(test.len(), n))
}

/// Top-`n` non-training items by descending score, ties to the smaller id.
pub fn top_n_excluding(scores: &[f64], exclude: &[usize], n: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    let mut cand: Vec<usize> = (0..scores.len()).filter(|v| exclude.binary_search(v).is_err()).collect();
    if n < cand.len() {
        if n == 0 {
            return Vec::new();
        }
        cand.select_nth_unstable_by(n - 1, cmp);
        cand.truncate(n);
    }
    cand.sort_unstable_by(cmp);
    cand
}

/// Per-user full-rank metrics; every non-training item is a candidate.
pub fn per_user_metrics<F>(score_user: F, num_users: usize, train: &InteractionGraph, test: &InteractionGraph, n: usize) -> Vec<UserMetrics>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    (0..num_users)
        .into_par_iter()
        .map(|u| {
            let t = test.items_of(u);
            if t.is_empty() {
                return None;
            }
            let scores = score_user(u);
            let top = top_n_excluding(&scores, train.items_of(u), n);
            debug_assert!(top.iter().all(|v| !train.contains(u, *v)));
            Some(score_ranking(&top, t, n))
        })
        .collect()
}

/// Ordered average over users with a test set.
pub fn aggregate(per_user: &[UserMetrics], n: usize) -> RankingMetrics {
    let (mut r, mut g, mut k) = (0.0, 0.0, 0usize);
    for (rec, ndcg) in per_user.iter().flatten() {
        r += rec;
        g += ndcg;
        k += 1;
    }
    let denom = k.max(1) as f64;
    RankingMetrics {
        n,
        recall: r / denom,
        ndcg: g / denom,
        users_evaluated: k,
        users_skipped: per_user.len() - k,
    }
}

/// Scores `e_u . e_v` for every item `v < num_items`.
pub fn embedding_scorer<'a, T: Scalar>(users: &'a Matrix<T>, entities: &'a Matrix<T>, num_items: usize) -> impl Fn(usize) -> Vec<f64> + Sync + 'a {
    move |u| {
        let eu = users.row(u);
        (0..num_items).map(|v| dot(eu, entities.row(v)).as_f64()).collect()
    }
}

/// Full-rank Recall@n / NDCG@n of embedding dot-product scores.
pub fn full_rank_eval<T: Scalar>(
    users: &Matrix<T>,
    entities: &Matrix<T>,
    train: &InteractionGraph,
    test: &InteractionGraph,
    n: usize,
) -> RankingMetrics {
    let per = per_user_metrics(embedding_scorer(users, entities, train.num_items()), train.num_users(), train, test, n);
    aggregate(&per, n)
}

/// Expected metrics of a uniformly random ranking of each user's candidates.
/// Recall is exact (`min(n, C) / C` for `C` candidates); NDCG is the exact
/// expectation `|test| / C * sum_{r < min(n, C)} 1/log2(r + 2)` over IDCG.
pub fn random_baseline(train: &InteractionGraph, test: &InteractionGraph, n: usize) -> RankingMetrics {
    let per: Vec<UserMetrics> = (0..train.num_users())
        .map(|u| {
            let t = test.items_of(u).len();
            if t == 0 {
                return None;
            }
            let c = train.num_items() - train.user_degree(u);
            let k = n.min(c);
            let recall = k as f64 / c as f64;
            let dcg = t as f64 / c as f64 * ideal_dcg(k, k);
            Some((recall, dcg / ideal_dcg(t, n)))
        })
        .collect();
    aggregate(&per, n)
}

/// Ranking by training popularity.
pub fn popularity_baseline(train: &InteractionGraph, test: &InteractionGraph, n: usize) -> RankingMetrics {
    let pop: Vec<f64> = (0..train.num_items()).map(|v| train.item_degree(v) as f64).collect();
    let per = per_user_metrics(|_| pop.clone(), train.num_users(), train, test, n);
    aggregate(&per, n)
}
