use std::fmt::Write as _;

use serde::Serialize;

use crate::diffkernel::ParamStore;
use crate::graphstore::KnowledgeGraph;
use crate::model::ParamLayout;
use crate::rationale::score_all;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationScore {
    pub relation: usize,
    pub name: String,
    pub mean_gamma: f64,
    pub triplets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryScores {
    pub category: usize,
    pub rows: Vec<RelationScore>,
}

/// Noise-free mean `gamma` per relation, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationaleReport {
    pub rows: Vec<RelationScore>,
    /// Per item category, over triplets whose head is an item of that category.
    pub categories: Vec<CategoryScores>,
}

/// Display name of relation `r`; inverse relations get a `^-1` suffix.
pub fn relation_name(kg: &KnowledgeGraph, names: Option<&[String]>, r: usize) -> String {
    let base = kg.base_relations();
    let (b, inv) = if r >= base { (r - base, "^-1") } else { (r, "") };
    match names.and_then(|n| n.get(b)) {
        Some(n) => format!("{n}{inv}"),
        None => format!("r{b}{inv}"),
    }
}

fn summarize(kg: &KnowledgeGraph, names: Option<&[String]>, gamma: &[f64], keep: impl Fn(usize) -> bool) -> Vec<RelationScore> {
    let mut sum = vec![0.0; kg.num_relations()];
    let mut cnt = vec![0usize; kg.num_relations()];
    for (i, t) in kg.triplets().iter().enumerate() {
        if keep(i) {
            sum[t.relation] += gamma[i];
            cnt[t.relation] += 1;
        }
    }
    let mut rows: Vec<RelationScore> = (0..kg.num_relations())
        .filter(|&r| cnt[r] > 0)
        .map(|r| RelationScore {
            relation: r,
            name: relation_name(kg, names, r),
            mean_gamma: sum[r] / cnt[r] as f64,
            triplets: cnt[r],
        })
        .collect();
    rows.sort_by(|a, b| b.mean_gamma.total_cmp(&a.mean_gamma).then(a.relation.cmp(&b.relation)));
    rows
}

/// Report from precomputed per-triplet `gamma`.
pub fn report_from_gamma(
    kg: &KnowledgeGraph,
    gamma: &[f64],
    names: Option<&[String]>,
    item_categories: Option<&[usize]>,
) -> RationaleReport {
    let rows = summarize(kg, names, gamma, |_| true);
    let mut categories = Vec::new();
    if let Some(cats) = item_categories {
        let mut labels: Vec<usize> = cats.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let trip = kg.triplets();
        for c in labels {
            let rows = summarize(kg, names, gamma, |i| cats.get(trip[i].head) == Some(&c));
            if !rows.is_empty() {
                categories.push(CategoryScores { category: c, rows });
            }
        }
    }
    RationaleReport { rows, categories }
}

/// Scores every triplet with the given parameters (no Gumbel noise) and
/// averages `gamma` per relation.
pub fn rationale_report<T: Scalar>(
    kg: &KnowledgeGraph,
    store: &ParamStore<T>,
    layout: &ParamLayout,
    names: Option<&[String]>,
    item_categories: Option<&[usize]>,
) -> RationaleReport {
    let scores = score_all(kg, store, layout);
    let gamma: Vec<f64> = scores.gamma.iter().map(|g| g.as_f64()).collect();
    report_from_gamma(kg, &gamma, names, item_categories)
}

impl RationaleReport {
    pub fn top_relation(&self) -> Option<usize> {
        self.rows.first().map(|r| r.relation)
    }

    pub fn mean_of(&self, relation: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.relation == relation).map(|r| r.mean_gamma)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        table(&mut out, &self.rows);
        for c in &self.categories {
            let _ = writeln!(out, "\ncategory {}", c.category);
            table(&mut out, &c.rows);
        }
        out
    }
}

fn table(out: &mut String, rows: &[RelationScore]) {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
    let _ = writeln!(out, "{:<w$}  {:>10}  {:>8}", "relation", "mean_gamma", "count");
    for r in rows {
        let _ = writeln!(out, "{:<w$}  {:>10.6}  {:>8}", r.name, r.mean_gamma, r.triplets);
    }
}
