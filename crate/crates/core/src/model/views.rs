use std::sync::Arc;

use crate::diffkernel::SparseMatrix;
use crate::graphstore::{InteractionGraph, KnowledgeGraph, TripletId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    FullKg,
    MaskedKg,
    AugmentedKg,
    FullUi,
    AugmentedUi,
}

/// The knowledge graph minus an excluded triplet set, laid out by head so
/// per-head reductions run over contiguous segments.
#[derive(Debug, Clone)]
pub struct KgView {
    pub kind: ViewKind,
    pub num_entities: usize,
    /// Surviving triplet ids in head-major order.
    pub ids: Vec<TripletId>,
    pub heads: Arc<[usize]>,
    pub relations: Arc<[usize]>,
    pub tails: Arc<[usize]>,
    /// `num_entities + 1` offsets into the surviving triplets.
    pub offsets: Arc<[usize]>,
}

impl KgView {
    pub fn full(kg: &KnowledgeGraph) -> Self {
        Self::excluding(kg, &[], ViewKind::FullKg)
    }

    pub fn excluding(kg: &KnowledgeGraph, excluded: &[TripletId], kind: ViewKind) -> Self {
        let mut drop = vec![false; kg.num_triplets()];
        for t in excluded {
            drop[t.0] = true;
        }
        let n = kg.num_entities();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut ids = Vec::new();
        offsets.push(0);
        for w in kg.head_offsets().windows(2) {
            for e in &kg.head_edges()[w[0]..w[1]] {
                if !drop[e.id.0] {
                    ids.push(e.id);
                }
            }
            offsets.push(ids.len());
        }
        let pick = |f: fn(&crate::graphstore::Triplet) -> usize| -> Arc<[usize]> {
            ids.iter().map(|&id| f(&kg.triplet(id))).collect()
        };
        KgView {
            kind,
            num_entities: n,
            heads: pick(|t| t.head),
            relations: pick(|t| t.relation),
            tails: pick(|t| t.tail),
            offsets: offsets.into(),
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn degree(&self, h: usize) -> usize {
        self.offsets[h + 1] - self.offsets[h]
    }
}

/// The interaction graph minus an excluded edge set.
#[derive(Debug, Clone)]
pub struct UiView {
    pub kind: ViewKind,
    pub num_users: usize,
    pub num_items: usize,
    /// Surviving `(user, item)` pairs, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl UiView {
    pub fn full(g: &InteractionGraph) -> Self {
        Self::excluding(g, &[], ViewKind::FullUi)
    }

    /// `excluded` holds edge ids, i.e. indices into `g.edges()`.
    pub fn excluding(g: &InteractionGraph, excluded: &[usize], kind: ViewKind) -> Self {
        let mut drop = vec![false; g.num_edges()];
        for &e in excluded {
            drop[e] = true;
        }
        let edges = g
            .edges()
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(&e, _)| e)
            .collect();
        UiView {
            kind,
            num_users: g.num_users(),
            num_items: g.num_items(),
            edges,
        }
    }

    /// Row-normalised user-to-entity operator: row `u` averages the rows of
    /// `u`'s items. `cols` is the row count of the matrix it multiplies.
    pub fn user_mean_operator<T: Scalar>(&self, cols: usize) -> SparseMatrix<T> {
        let mut deg = vec![0usize; self.num_users];
        for &(u, _) in &self.edges {
            deg[u] += 1;
        }
        SparseMatrix::from_sorted_entries(
            self.num_users,
            cols,
            self.edges.iter().map(|&(u, v)| (u, v, T::one() / T::of_usize(deg[u]))),
        )
    }

    /// Symmetric-normalised adjacency over users `0..U` followed by items
    /// `U..U+I`, with entries `1 / sqrt(d_u d_v)`.
    pub fn normalized_adjacency<T: Scalar>(&self) -> SparseMatrix<T> {
        let (nu, ni) = (self.num_users, self.num_items);
        let mut du = vec![0usize; nu];
        let mut di = vec![0usize; ni];
        for &(u, v) in &self.edges {
            du[u] += 1;
            di[v] += 1;
        }
        let coef = |u: usize, v: usize| T::one() / T::of_usize(du[u] * di[v]).sqrt();
        let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); ni];
        for &(u, v) in &self.edges {
            by_item[v].push(u);
        }
        let user_rows = self.edges.iter().map(|&(u, v)| (u, nu + v, coef(u, v)));
        let item_rows = by_item
            .iter()
            .enumerate()
            .flat_map(|(v, us)| us.iter().map(move |&u| (nu + v, u, coef(u, v))));
        SparseMatrix::from_sorted_entries(nu + ni, nu + ni, user_rows.chain(item_rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::Triplet;

    #[test]
    fn exclusion_matches_rebuilt_graph() {
        let trip = vec![
            Triplet::new(0, 0, 1),
            Triplet::new(1, 1, 2),
            Triplet::new(0, 1, 2),
            Triplet::new(2, 0, 0),
        ];
        let kg = KnowledgeGraph::new(3, 2, trip.clone(), false).unwrap();
        let v = KgView::excluding(&kg, &[TripletId(2)], ViewKind::MaskedKg);
        let mut kept = trip.clone();
        kept.remove(2);
        let rebuilt = KgView::full(&KnowledgeGraph::new(3, 2, kept, false).unwrap());
        assert_eq!(v.heads, rebuilt.heads);
        assert_eq!(v.relations, rebuilt.relations);
        assert_eq!(v.tails, rebuilt.tails);
        assert_eq!(v.offsets, rebuilt.offsets);
        assert_eq!(v.degree(0), 1);
    }

    #[test]
    fn single_edge_has_unit_coefficient() {
        let g = InteractionGraph::from_edges(1, 1, vec![(0, 0)]).unwrap();
        let a = UiView::full(&g).normalized_adjacency::<f64>().to_dense();
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 0)], 1.0);
        assert_eq!(a[(0, 0)], 0.0);
    }
}
