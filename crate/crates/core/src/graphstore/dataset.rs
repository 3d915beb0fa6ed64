use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::interactions::{load_interactions, write_interactions, InteractionGraph, Split};
use super::filter::ten_core_filter;
use super::kg::{load_kg, write_kg, KgLimits, KnowledgeGraph};
use crate::error::{KgError, Result};

pub const KG_FILE: &str = "kg_final.txt";

/// Train / validation / test interactions plus the item knowledge graph,
/// all sharing one user and one item id space.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: InteractionGraph,
    pub valid: InteractionGraph,
    pub test: InteractionGraph,
    pub kg: KnowledgeGraph,
    /// Optional display names, indexed by base relation id.
    pub relation_names: Option<Vec<String>>,
    /// Optional category label per item.
    pub item_categories: Option<Vec<usize>>,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// Checks the cross-structure invariants: shared dimensions and items
    /// forming an entity prefix.
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("valid", &self.valid), ("test", &self.test)] {
            if g.num_users() != self.train.num_users() || g.num_items() != self.train.num_items() {
                return Err(KgError::Validation(format!("{name} split dimensions differ from train")));
            }
        }
        if self.kg.num_entities() < self.num_items() {
            return Err(KgError::Validation(format!(
                "{} items but only {} entities; items must be an entity prefix",
                self.num_items(),
                self.kg.num_entities()
            )));
        }
        if let Some(cats) = &self.item_categories {
            if cats.len() != self.num_items() {
                return Err(KgError::Validation("item category list length differs from item count".into()));
            }
        }
        Ok(())
    }

    /// Same interactions with a different knowledge graph.
    pub fn with_kg(&self, kg: KnowledgeGraph) -> Self {
        Dataset {
            kg,
            ..self.clone()
        }
    }

    /// Loads `train.txt`, `valid.txt`, `test.txt` and `kg_final.txt` from a
    /// directory. When only `train.txt` exists it is split 70/10/20 per user
    /// using `split_seed`. Returns the dataset and key-value loader stats.
    pub fn load_dir(dir: impl AsRef<Path>, add_inverse: bool, split_seed: u64) -> Result<(Self, String)> {
        let dir = dir.as_ref();
        let mut report = String::new();
        let mut graphs = Vec::new();
        for split in [Split::Train, Split::Valid, Split::Test] {
            let path = dir.join(split.file_name());
            if split != Split::Train && !path.exists() {
                continue;
            }
            let (g, stats) = load_interactions(&path, split, None)?;
            report.push_str(&stats.to_kv(&split.to_string()));
            graphs.push(g);
        }
        let num_users = graphs.iter().map(|g| g.num_users()).max().unwrap_or(0);
        let num_items = graphs.iter().map(|g| g.num_items()).max().unwrap_or(0);
        let (kg, kg_stats) = load_kg(
            dir.join(KG_FILE),
            add_inverse,
            KgLimits {
                min_entities: num_items,
                ..KgLimits::default()
            },
        )?;
        report.push_str(&kg_stats.to_kv("kg"));
        let resized: Vec<InteractionGraph> = graphs
            .iter()
            .map(|g| g.with_dims(num_users, num_items))
            .collect::<Result<_>>()?;
        let (train, valid, test) = match resized.len() {
            3 => {
                let mut it = resized.into_iter();
                (it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
            }
            1 => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(split_seed);
                split_per_user(&resized[0], SplitFractions::default(), &mut rng)?
            }
            _ => {
                return Err(KgError::Validation(format!(
                    "{}: provide both valid.txt and test.txt, or neither",
                    dir.display()
                )))
            }
        };
        report.push_str(&format!(
            "users = {}\nitems = {}\nentities = {}\nrelations = {}\ntriplets = {}\ntrain_edges = {}\nvalid_edges = {}\ntest_edges = {}\n",
            num_users,
            num_items,
            kg.num_entities(),
            kg.num_relations(),
            kg.num_triplets(),
            train.num_edges(),
            valid.num_edges(),
            test.num_edges()
        ));
        let name = dir.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
        let ds = Dataset {
            name,
            train,
            valid,
            test,
            kg,
            relation_names: None,
            item_categories: None,
        };
        ds.validate()?;
        Ok((ds, report))
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| KgError::io(dir, e))?;
        write_interactions(&self.train, dir.join(Split::Train.file_name()))?;
        write_interactions(&self.valid, dir.join(Split::Valid.file_name()))?;
        write_interactions(&self.test, dir.join(Split::Test.file_name()))?;
        write_kg(&self.kg, dir.join(KG_FILE))
    }

    /// Applies k-core filtering to the union of all splits, renumbers users,
    /// items and entities (non-item entities follow the kept items), and
    /// re-splits per user with `split_seed`.
    pub fn k_core(&self, k: usize, split_seed: u64) -> Result<Self> {
        let (g, map) = ten_core_filter(&self.all_interactions()?, k)?;
        let ni = self.num_items();
        let kept = map.kept_items();
        let ne = kept + self.kg.num_entities() - ni;
        let ent_map: Vec<Option<usize>> = (0..self.kg.num_entities())
            .map(|e| if e < ni { map.items[e] } else { Some(kept + e - ni) })
            .collect();
        let kg = self.kg.remap_entities(&ent_map, ne)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(split_seed);
        let (train, valid, test) = split_per_user(&g, SplitFractions::default(), &mut rng)?;
        let item_categories = self.item_categories.as_ref().map(|c| {
            (0..ni).filter(|&v| map.items[v].is_some()).map(|v| c[v]).collect()
        });
        let ds = Dataset {
            name: self.name.clone(),
            train,
            valid,
            test,
            kg,
            relation_names: self.relation_names.clone(),
            item_categories,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Union of all three splits.
    pub fn all_interactions(&self) -> Result<InteractionGraph> {
        let edges = self
            .train
            .edges()
            .iter()
            .chain(self.valid.edges())
            .chain(self.test.edges())
            .copied()
            .collect();
        InteractionGraph::from_edges(self.num_users(), self.num_items(), edges)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.7, valid: 0.1 }
    }
}

/// User-stratified split: each user's items are shuffled and cut into
/// `round(0.7 n)` train (at least one), `round(0.1 n)` validation and the
/// remainder test, so every user with interactions appears in training.
pub fn split_per_user<R: Rng + ?Sized>(
    all: &InteractionGraph,
    fractions: SplitFractions,
    rng: &mut R,
) -> Result<(InteractionGraph, InteractionGraph, InteractionGraph)> {
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for u in 0..all.num_users() {
        let mut items = all.items_of(u).to_vec();
        if items.is_empty() {
            continue;
        }
        items.shuffle(rng);
        let n = items.len();
        let n_train = ((fractions.train * n as f64).round() as usize).clamp(1, n);
        let n_valid = ((fractions.valid * n as f64).round() as usize).min(n - n_train);
        for (i, v) in items.into_iter().enumerate() {
            let bucket = if i < n_train {
                &mut tr
            } else if i < n_train + n_valid {
                &mut va
            } else {
                &mut te
            };
            bucket.push((u, v));
        }
    }
    let (nu, ni) = (all.num_users(), all.num_items());
    Ok((
        InteractionGraph::from_edges(nu, ni, tr)?,
        InteractionGraph::from_edges(nu, ni, va)?,
        InteractionGraph::from_edges(nu, ni, te)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_user_split_counts() {
        let edges: Vec<_> = (0..10).map(|v| (0, v)).chain([(1, 3)]).collect();
        let g = InteractionGraph::from_edges(2, 10, edges).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (tr, va, te) = split_per_user(&g, SplitFractions::default(), &mut rng).unwrap();
        assert_eq!(tr.user_degree(0), 7);
        assert_eq!(va.user_degree(0), 1);
        assert_eq!(te.user_degree(0), 2);
        assert_eq!(tr.items_of(1), &[3]);
        assert_eq!(tr.num_edges() + va.num_edges() + te.num_edges(), g.num_edges());
    }

    #[test]
    fn directory_round_trip_with_auto_split() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.txt"), "0 0 1 2 3 4 5 6 7 8 9\n1 0 1\n").unwrap();
        std::fs::write(dir.path().join(KG_FILE), "0 0 12\n1 1 12\n").unwrap();
        let (ds, report) = Dataset::load_dir(dir.path(), true, 7).unwrap();
        assert!(report.contains("kg.lines = 2"));
        assert_eq!(ds.kg.num_entities(), 13);
        assert_eq!(ds.kg.num_triplets(), 4);
        assert_eq!(ds.all_interactions().unwrap().num_edges(), 12);

        let out = tempfile::tempdir().unwrap();
        ds.write_dir(out.path()).unwrap();
        let (again, _) = Dataset::load_dir(out.path(), true, 0).unwrap();
        assert_eq!(again.train, ds.train);
        assert_eq!(again.test, ds.test);
        assert_eq!(again.kg, ds.kg);
    }
}
