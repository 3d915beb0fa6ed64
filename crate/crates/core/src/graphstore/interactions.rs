use std::fmt;
use std::path::Path;

use super::csr::Csr;
use crate::error::{KgError, Result};

/// Which partition of the interaction data a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Binary user-item graph. An edge `(u, v)` means `y_uv = 1`.
///
/// Edges are deduplicated and sorted by `(user, item)`; the position of an
/// edge in that order is its edge id, shared by both CSR directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    edges: Vec<(usize, usize)>,
    user_csr: Csr,
    item_csr: Csr,
}

impl InteractionGraph {
    pub fn from_edges(num_users: usize, num_items: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= num_users || v >= num_items) {
            return Err(KgError::Validation(format!(
                "edge ({u}, {v}) outside {num_users} users x {num_items} items"
            )));
        }
        edges.sort_unstable();
        edges.dedup();
        let user_csr = Csr::from_entries(num_users, edges.iter().enumerate().map(|(id, &(u, v))| (u, v, id)));
        let item_csr = Csr::from_entries(num_items, edges.iter().enumerate().map(|(id, &(u, v))| (v, u, id)));
        Ok(InteractionGraph {
            num_users,
            num_items,
            edges,
            user_csr,
            item_csr,
        })
    }

    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self::from_edges(num_users, num_items, Vec::new()).expect("empty graph is valid")
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn user_csr(&self) -> &Csr {
        &self.user_csr
    }

    pub fn item_csr(&self) -> &Csr {
        &self.item_csr
    }

    /// Items of user `u`, ascending.
    pub fn items_of(&self, u: usize) -> &[usize] {
        self.user_csr.targets(u)
    }

    /// Users of item `v`, ascending.
    pub fn users_of(&self, v: usize) -> &[usize] {
        self.item_csr.targets(v)
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_csr.degree(u)
    }

    pub fn item_degree(&self, v: usize) -> usize {
        self.item_csr.degree(v)
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u < self.num_users && self.items_of(u).binary_search(&v).is_ok()
    }

    /// Same edges, re-indexed into a larger id space.
    pub fn with_dims(&self, num_users: usize, num_items: usize) -> Result<Self> {
        Self::from_edges(num_users, num_items, self.edges.clone())
    }
}

/// Counters collected while parsing an interaction file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionStats {
    pub lines: usize,
    pub users_without_items: usize,
    pub raw_pairs: usize,
    pub duplicates: usize,
    pub max_user: Option<usize>,
    pub max_item: Option<usize>,
}

impl InteractionStats {
    pub fn to_kv(&self, prefix: &str) -> String {
        let opt = |o: Option<usize>| o.map_or_else(|| "none".to_string(), |x| x.to_string());
        format!(
            "{prefix}.lines = {}\n{prefix}.users_without_items = {}\n{prefix}.raw_pairs = {}\n{prefix}.duplicates = {}\n{prefix}.max_user = {}\n{prefix}.max_item = {}\n",
            self.lines,
            self.users_without_items,
            self.raw_pairs,
            self.duplicates,
            opt(self.max_user),
            opt(self.max_item)
        )
    }
}

/// Parses adjacency-list text: each nonempty line is `user item item ...`.
pub fn parse_interactions(text: &str, path: &Path) -> Result<(Vec<(usize, usize)>, InteractionStats)> {
    let mut stats = InteractionStats::default();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else { continue };
        stats.lines += 1;
        let parse = |tok: &str| {
            tok.parse::<usize>().map_err(|_| KgError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected a non-negative integer, found `{tok}`"),
            })
        };
        let user = parse(first)?;
        let before = pairs.len();
        for tok in tokens {
            pairs.push((user, parse(tok)?));
        }
        if pairs.len() == before {
            stats.users_without_items += 1;
            continue;
        }
        stats.max_user = stats.max_user.max(Some(user));
        for &(_, v) in &pairs[before..] {
            stats.max_item = stats.max_item.max(Some(v));
        }
    }
    stats.raw_pairs = pairs.len();
    let mut unique = pairs.clone();
    unique.sort_unstable();
    unique.dedup();
    stats.duplicates = pairs.len() - unique.len();
    Ok((pairs, stats))
}

/// Loads one interaction split. Dimensions are `max id + 1` unless `dims`
/// overrides them.
pub fn load_interactions(
    path: impl AsRef<Path>,
    split: Split,
    dims: Option<(usize, usize)>,
) -> Result<(InteractionGraph, InteractionStats)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    let (pairs, stats) = parse_interactions(&text, path)?;
    if stats.users_without_items > 0 {
        log::warn!(
            "{split} split {}: skipped {} user lines without items",
            path.display(),
            stats.users_without_items
        );
    }
    let (nu, ni) = dims.unwrap_or((
        stats.max_user.map_or(0, |m| m + 1),
        stats.max_item.map_or(0, |m| m + 1),
    ));
    let graph = InteractionGraph::from_edges(nu, ni, pairs)?;
    Ok((graph, stats))
}

/// Writes the adjacency-list format read by [`load_interactions`].
pub fn write_interactions(graph: &InteractionGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for u in 0..graph.num_users() {
        let items = graph.items_of(u);
        if items.is_empty() {
            continue;
        }
        out.push_str(&u.to_string());
        for v in items {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| KgError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Vec<(usize, usize)>, InteractionStats)> {
        parse_interactions(text, Path::new("mem"))
    }

    #[test]
    fn small_file_builds_expected_graph() {
        let (pairs, stats) = parse("0 1 2\n1 2\n").unwrap();
        let g = InteractionGraph::from_edges(2, 3, pairs).unwrap();
        assert_eq!(stats.max_user, Some(1));
        assert_eq!(stats.max_item, Some(2));
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.users_of(2), &[0, 1]);
    }

    #[test]
    fn empty_input_is_an_empty_graph() {
        let (pairs, stats) = parse("").unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.max_user, None);
        let g = InteractionGraph::from_edges(0, 0, pairs).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn malformed_token_names_the_line() {
        let err = parse("0 1\n1 x 2\n").unwrap_err();
        match err {
            KgError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("-1 2\n").is_err());
    }

    #[test]
    fn lone_user_lines_are_counted_and_skipped() {
        let (pairs, stats) = parse("0 1\n4\n\n2 3 3\n").unwrap();
        assert_eq!(stats.users_without_items, 1);
        assert_eq!(stats.duplicates, 1);
        assert_eq!(stats.max_user, Some(2));
        let g = InteractionGraph::from_edges(3, 4, pairs).unwrap();
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(InteractionGraph::from_edges(1, 1, vec![(0, 1)]).is_err());
    }

    #[test]
    fn csr_directions_describe_the_same_edges() {
        let g = InteractionGraph::from_edges(3, 4, vec![(2, 0), (0, 3), (1, 3), (0, 0), (2, 0)]).unwrap();
        let mut from_users: Vec<_> = (0..3).flat_map(|u| g.items_of(u).iter().map(move |&v| (u, v))).collect();
        let mut from_items: Vec<_> = (0..4).flat_map(|v| g.users_of(v).iter().map(move |&u| (u, v))).collect();
        from_users.sort_unstable();
        from_items.sort_unstable();
        assert_eq!(from_users, g.edges());
        assert_eq!(from_items, g.edges());
        for v in 0..4 {
            for (&u, &id) in g.users_of(v).iter().zip(g.item_csr().edge_ids(v)) {
                assert_eq!(g.edges()[id], (u, v));
            }
        }
    }
}
