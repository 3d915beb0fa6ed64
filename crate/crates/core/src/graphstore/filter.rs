use super::interactions::InteractionGraph;
use crate::error::{KgError, Result};

/// Old-id to new-id maps produced by filtering; `None` marks a dropped id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMapping {
    pub users: Vec<Option<usize>>,
    pub items: Vec<Option<usize>>,
}

impl IdMapping {
    pub fn kept_users(&self) -> usize {
        self.users.iter().flatten().count()
    }

    pub fn kept_items(&self) -> usize {
        self.items.iter().flatten().count()
    }
}

/// Iteratively drops users and items with degree `< k` until every survivor
/// has degree `>= k`, then re-compacts both id spaces (order preserving).
pub fn ten_core_filter(graph: &InteractionGraph, k: usize) -> Result<(InteractionGraph, IdMapping)> {
    if k == 0 {
        return Err(KgError::Config("core size k must be >= 1".into()));
    }
    let nu = graph.num_users();
    let ni = graph.num_items();
    let mut user_alive = vec![true; nu];
    let mut item_alive = vec![true; ni];
    let mut user_deg: Vec<usize> = (0..nu).map(|u| graph.user_degree(u)).collect();
    let mut item_deg: Vec<usize> = (0..ni).map(|v| graph.item_degree(v)).collect();

    // Worklist peeling: each removal decrements its neighbours' degrees.
    let mut stack: Vec<(bool, usize)> = Vec::new();
    for u in 0..nu {
        if user_deg[u] < k {
            user_alive[u] = false;
            stack.push((true, u));
        }
    }
    for v in 0..ni {
        if item_deg[v] < k {
            item_alive[v] = false;
            stack.push((false, v));
        }
    }
    while let Some((is_user, id)) = stack.pop() {
        if is_user {
            for &v in graph.items_of(id) {
                if item_alive[v] {
                    item_deg[v] -= 1;
                    if item_deg[v] < k {
                        item_alive[v] = false;
                        stack.push((false, v));
                    }
                }
            }
        } else {
            for &u in graph.users_of(id) {
                if user_alive[u] {
                    user_deg[u] -= 1;
                    if user_deg[u] < k {
                        user_alive[u] = false;
                        stack.push((true, u));
                    }
                }
            }
        }
    }

    let compact = |alive: &[bool]| {
        let mut next = 0;
        alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect::<Vec<_>>()
    };
    let users = compact(&user_alive);
    let items = compact(&item_alive);
    let edges: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter_map(|&(u, v)| Some((users[u]?, items[v]?)))
        .collect();
    if edges.is_empty() {
        return Err(KgError::EmptyAfterFiltering { k });
    }
    let mapping = IdMapping { users, items };
    let filtered = InteractionGraph::from_edges(mapping.kept_users(), mapping.kept_items(), edges)?;
    Ok((filtered, mapping))
}
