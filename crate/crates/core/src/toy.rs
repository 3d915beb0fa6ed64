//! Planted-structure synthetic dataset.
//!
//! Items fall into clusters; relation 0 links every item to its cluster's
//! entity, the other relations link items to random attribute entities.
//! Each user prefers one cluster and draws most interactions from it, so
//! only relation 0 carries preference signal.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::graphstore::{split_per_user, Dataset, InteractionGraph, KnowledgeGraph, SplitFractions, Triplet};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub users: usize,
    pub items: usize,
    pub entities: usize,
    pub relations: usize,
    pub clusters: usize,
    /// Inclusive range of in-cluster interactions per user.
    pub in_cluster: (usize, usize),
    /// Inclusive range of interactions outside the preferred cluster.
    pub out_cluster: (usize, usize),
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            users: 200,
            items: 100,
            entities: 300,
            relations: 5,
            clusters: 10,
            in_cluster: (6, 9),
            out_cluster: (1, 2),
        }
    }
}

impl ToyConfig {
    /// Ten users over a twenty-entity graph, for gradient checks.
    pub fn tiny() -> Self {
        ToyConfig {
            users: 10,
            items: 8,
            entities: 20,
            relations: 3,
            clusters: 2,
            in_cluster: (3, 4),
            out_cluster: (1, 1),
        }
    }

    pub fn relation_names(&self) -> Vec<String> {
        (0..self.relations)
            .map(|r| if r == 0 { "cluster_of".to_string() } else { format!("random_attr_{r}") })
            .collect()
    }
}

/// Id of the relation that reveals item clusters.
pub const PLANTED_RELATION: usize = 0;

pub fn generate_toy(cfg: &ToyConfig, seed: u64, add_inverse: bool) -> Result<Dataset> {
    let attrs_from = cfg.items + cfg.clusters;
    if cfg.clusters == 0 || cfg.items < cfg.clusters || cfg.entities <= attrs_from || cfg.relations == 0 {
        return Err(KgError::Config(format!("toy sizes do not fit: {cfg:?}")));
    }
    let mut rng = stream_rng(seed, Stream::Toy, 0);
    let cluster_of = |v: usize| v % cfg.clusters;
    let members: Vec<Vec<usize>> = (0..cfg.clusters)
        .map(|c| (0..cfg.items).filter(|&v| cluster_of(v) == c).collect())
        .collect();

    let mut triplets = Vec::new();
    for v in 0..cfg.items {
        triplets.push(Triplet::new(v, PLANTED_RELATION, cfg.items + cluster_of(v)));
        for r in 1..cfg.relations {
            triplets.push(Triplet::new(v, r, rng.gen_range(attrs_from..cfg.entities)));
        }
    }
    let kg = KnowledgeGraph::new(cfg.entities, cfg.relations, triplets, add_inverse)?;

    let mut edges = Vec::new();
    for u in 0..cfg.users {
        let c = u % cfg.clusters;
        let k_in = rng.gen_range(cfg.in_cluster.0..=cfg.in_cluster.1).min(members[c].len());
        edges.extend(members[c].choose_multiple(&mut rng, k_in).map(|&v| (u, v)));
        let others: Vec<usize> = (0..cfg.items).filter(|&v| cluster_of(v) != c).collect();
        let k_out = rng.gen_range(cfg.out_cluster.0..=cfg.out_cluster.1).min(others.len());
        edges.extend(others.choose_multiple(&mut rng, k_out).map(|&v| (u, v)));
    }
    let all = InteractionGraph::from_edges(cfg.users, cfg.items, edges)?;
    let mut split_rng = stream_rng(seed, Stream::Split, 0);
    let (train, valid, test) = split_per_user(&all, SplitFractions::default(), &mut split_rng)?;
    let ds = Dataset {
        name: "toy".into(),
        train,
        valid,
        test,
        kg,
        relation_names: Some(cfg.relation_names()),
        item_categories: Some((0..cfg.items).map(cluster_of).collect()),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_shape() {
        let ds = generate_toy(&ToyConfig::default(), 1, true).unwrap();
        assert_eq!(ds.num_users(), 200);
        assert_eq!(ds.num_items(), 100);
        assert_eq!(ds.kg.num_entities(), 300);
        assert_eq!(ds.kg.base_relations(), 5);
        assert_eq!(ds.kg.num_relations(), 10);
        assert!((0..200).all(|u| ds.train.user_degree(u) > 0));
        let again = generate_toy(&ToyConfig::default(), 1, true).unwrap();
        assert_eq!(again.train, ds.train);
        assert_ne!(generate_toy(&ToyConfig::default(), 2, true).unwrap().train, ds.train);
    }

    #[test]
    fn tiny_toy_is_small() {
        let ds = generate_toy(&ToyConfig::tiny(), 0, true).unwrap();
        assert_eq!(ds.num_users(), 10);
        assert!(ds.kg.num_entities() <= 20);
    }
}
