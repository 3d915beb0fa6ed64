use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, RankingMetrics, UserMetrics};
use crate::error::{KgError, Result};
use crate::graphstore::InteractionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// The user's own training interaction count.
    UserDegree,
    /// Mean training popularity of the user's training items.
    ItemSparsity,
}

impl std::str::FromStr for GroupKind {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user-degree" | "user_degree" | "degree" => Ok(GroupKind::UserDegree),
            "item-sparsity" | "item_sparsity" | "sparsity" => Ok(GroupKind::ItemSparsity),
            _ => Err(KgError::Config(format!(
                "groups: unknown kind {s:?} (expected user-degree or item-sparsity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    /// Smallest and largest statistic in the group.
    pub lo: f64,
    pub hi: f64,
    pub users: Vec<usize>,
    pub metrics: RankingMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub kind: GroupKind,
    pub groups: Vec<Group>,
    pub warnings: Vec<String>,
}

/// Grouping statistic of every user.
pub fn user_statistic(train: &InteractionGraph, kind: GroupKind) -> Vec<f64> {
    (0..train.num_users())
        .map(|u| {
            let items = train.items_of(u);
            match kind {
                GroupKind::UserDegree => items.len() as f64,
                GroupKind::ItemSparsity if items.is_empty() => 0.0,
                GroupKind::ItemSparsity => items.iter().map(|&v| train.item_degree(v) as f64).sum::<f64>() / items.len() as f64,
            }
        })
        .collect()
}

/// Equal-count quantile groups of `users` by `stat`, ascending. Users with
/// equal statistics never straddle a boundary, so ties can merge groups.
pub fn quantile_groups(users: &[usize], stat: &[f64], num_groups: usize) -> Vec<Vec<usize>> {
    let mut sorted = users.to_vec();
    sorted.sort_by(|&a, &b| stat[a].total_cmp(&stat[b]).then(a.cmp(&b)));
    let n = sorted.len();
    let g = num_groups.max(1);
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=g {
        let mut end = (i * n / g).max(start);
        while end > start && end < n && stat[sorted[end]] == stat[sorted[end - 1]] {
            end += 1;
        }
        if end > start {
            groups.push(sorted[start..end].to_vec());
            start = end;
        }
    }
    groups
}

/// Splits the users that have test items into `num_groups` quantile groups
/// and averages their precomputed metrics per group.
pub fn group_eval(
    per_user: &[UserMetrics],
    train: &InteractionGraph,
    kind: GroupKind,
    num_groups: usize,
    n: usize,
) -> Result<GroupReport> {
    if num_groups == 0 {
        return Err(KgError::Config("groups: need at least one group".into()));
    }
    let stat = user_statistic(train, kind);
    let users: Vec<usize> = (0..per_user.len()).filter(|&u| per_user[u].is_some()).collect();
    let mut warnings = Vec::new();
    let mut g = num_groups;
    if users.len() < g {
        let msg = format!("only {} evaluated users; reducing {} groups to {}", users.len(), g, users.len().max(1));
        log::warn!("{msg}");
        warnings.push(msg);
        g = users.len().max(1);
    }
    let groups = quantile_groups(&users, &stat, g)
        .into_iter()
        .map(|members| {
            let sub: Vec<UserMetrics> = members.iter().map(|&u| per_user[u]).collect();
            Group {
                lo: stat[members[0]],
                hi: stat[*members.last().unwrap()],
                metrics: aggregate(&sub, n),
                users: members,
            }
        })
        .collect::<Vec<_>>();
    if groups.len() < g && !users.is_empty() {
        let msg = format!("tied statistics merged {g} groups into {}", groups.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(GroupReport { kind, groups, warnings })
}

impl GroupReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let n = self.groups.first().map_or(20, |g| g.metrics.n);
        let _ = writeln!(out, "group  {:>10}  {:>10}  {:>6}  {:>10}  {:>10}", "stat_lo", "stat_hi", "users", format!("recall@{n}"), format!("ndcg@{n}"));
        for (i, g) in self.groups.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<5}  {:>10.3}  {:>10.3}  {:>6}  {:>10.6}  {:>10.6}",
                i, g.lo, g.hi, g.users.len(), g.metrics.recall, g.metrics.ndcg
            );
        }
        out
    }
}
