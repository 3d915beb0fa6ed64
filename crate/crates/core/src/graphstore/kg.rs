use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{KgError, Result};

/// Stable identity of a triplet: its index into [`KnowledgeGraph::triplets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripletId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triplet {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triplet { head, relation, tail }
    }
}

/// One entry of a head's neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgEdge {
    pub relation: usize,
    pub tail: usize,
    pub id: TripletId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KgStats {
    pub lines: usize,
    pub duplicates: usize,
    pub self_loops: usize,
}

impl KgStats {
    pub fn to_kv(&self, prefix: &str) -> String {
        format!(
            "{prefix}.lines = {}\n{prefix}.duplicates = {}\n{prefix}.self_loops = {}\n",
            self.lines, self.duplicates, self.self_loops
        )
    }
}

/// Immutable triplet store with per-head adjacency.
///
/// Items are the entity prefix `0..num_items`. When inverse-augmented, the
/// second half of `triplets` mirrors the first: triplet `i + T/2` is
/// `(t, r + base_relations, h)` for triplet `i = (h, r, t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    num_entities: usize,
    base_relations: usize,
    inverse: bool,
    triplets: Vec<Triplet>,
    head_offsets: Vec<usize>,
    head_edges: Vec<KgEdge>,
}

impl KnowledgeGraph {
    /// Builds a graph from base triplets. Duplicates are dropped (first
    /// occurrence kept); the relation count is doubled when `add_inverse`.
    pub fn new(num_entities: usize, base_relations: usize, triplets: Vec<Triplet>, add_inverse: bool) -> Result<Self> {
        for t in &triplets {
            if t.head >= num_entities || t.tail >= num_entities {
                return Err(KgError::Validation(format!(
                    "triplet ({}, {}, {}) references an entity >= {num_entities}",
                    t.head, t.relation, t.tail
                )));
            }
            if t.relation >= base_relations {
                return Err(KgError::Validation(format!(
                    "triplet ({}, {}, {}) references a relation >= {base_relations}",
                    t.head, t.relation, t.tail
                )));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(triplets.len());
        let mut base: Vec<Triplet> = triplets.into_iter().filter(|t| seen.insert(*t)).collect();
        if add_inverse {
            let mirrored: Vec<Triplet> = base
                .iter()
                .map(|t| Triplet::new(t.tail, t.relation + base_relations, t.head))
                .collect();
            base.extend(mirrored);
        }
        let mut counts = vec![0usize; num_entities + 1];
        for t in &base {
            counts[t.head + 1] += 1;
        }
        for e in 0..num_entities {
            counts[e + 1] += counts[e];
        }
        let head_offsets = counts.clone();
        let mut cursor = counts;
        let mut head_edges = vec![
            KgEdge {
                relation: 0,
                tail: 0,
                id: TripletId(0)
            };
            base.len()
        ];
        for (i, t) in base.iter().enumerate() {
            head_edges[cursor[t.head]] = KgEdge {
                relation: t.relation,
                tail: t.tail,
                id: TripletId(i),
            };
            cursor[t.head] += 1;
        }
        Ok(KnowledgeGraph {
            num_entities,
            base_relations,
            inverse: add_inverse,
            triplets: base,
            head_offsets,
            head_edges,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Relation count including inverse relations.
    pub fn num_relations(&self) -> usize {
        if self.inverse {
            2 * self.base_relations
        } else {
            self.base_relations
        }
    }

    pub fn base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn is_inverse_augmented(&self) -> bool {
        self.inverse
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn triplet(&self, id: TripletId) -> Triplet {
        self.triplets[id.0]
    }

    /// Triplets as loaded, without the inverse half.
    pub fn base_triplets(&self) -> &[Triplet] {
        if self.inverse {
            &self.triplets[..self.triplets.len() / 2]
        } else {
            &self.triplets
        }
    }

    /// The neighbourhood `N_h`: every triplet whose head is `h`, in id order.
    pub fn neighbors_kg(&self, h: usize) -> Result<&[KgEdge]> {
        if h >= self.num_entities {
            return Err(KgError::Contract(format!(
                "entity {h} out of range (num_entities = {})",
                self.num_entities
            )));
        }
        Ok(&self.head_edges[self.head_offsets[h]..self.head_offsets[h + 1]])
    }

    pub fn head_degree(&self, h: usize) -> usize {
        self.head_offsets[h + 1] - self.head_offsets[h]
    }

    pub fn head_offsets(&self) -> &[usize] {
        &self.head_offsets
    }

    /// All neighbourhoods concatenated in head order.
    pub fn head_edges(&self) -> &[KgEdge] {
        &self.head_edges
    }

    /// Keeps `round(ratio * base_count)` base triplets chosen uniformly at
    /// random, then re-applies inverse augmentation if this graph had it.
    pub fn subsample<R: Rng + ?Sized>(&self, ratio: f64, rng: &mut R) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(KgError::Config(format!("keep ratio {ratio} outside (0, 1]")));
        }
        let base = self.base_triplets();
        let keep = (ratio * base.len() as f64).round() as usize;
        if keep == 0 {
            return Err(KgError::Config(format!(
                "keep ratio {ratio} retains no triplets out of {}",
                base.len()
            )));
        }
        let mut chosen = sample(rng, base.len(), keep).into_vec();
        chosen.sort_unstable();
        let kept = chosen.into_iter().map(|i| base[i]).collect();
        Self::new(self.num_entities, self.base_relations, kept, self.inverse)
    }

    /// Renames entities through `map` (old id -> new id); triplets touching a
    /// dropped entity are removed.
    pub fn remap_entities(&self, map: &[Option<usize>], num_entities: usize) -> Result<Self> {
        let kept = self
            .base_triplets()
            .iter()
            .filter_map(|t| Some(Triplet::new(map[t.head]?, t.relation, map[t.tail]?)))
            .collect();
        Self::new(num_entities, self.base_relations, kept, self.inverse)
    }
}

/// Parses `head relation tail` lines. Returns base triplets in file order
/// (duplicates included) plus counters.
pub fn parse_kg(text: &str, path: &Path) -> Result<(Vec<Triplet>, KgStats)> {
    let mut stats = KgStats::default();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        stats.lines += 1;
        let err = |msg: String| KgError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if toks.len() != 3 {
            return Err(err(format!("expected `head relation tail`, found {} fields", toks.len())));
        }
        let mut ids = [0usize; 3];
        for (slot, tok) in ids.iter_mut().zip(&toks) {
            *slot = tok
                .parse()
                .map_err(|_| err(format!("expected a non-negative integer, found `{tok}`")))?;
        }
        if ids[0] == ids[2] {
            stats.self_loops += 1;
        }
        out.push(Triplet::new(ids[0], ids[1], ids[2]));
    }
    let mut unique = out.clone();
    unique.sort_unstable();
    unique.dedup();
    stats.duplicates = out.len() - unique.len();
    Ok((out, stats))
}

/// Declared entity / relation counts to validate a KG file against.
#[derive(Debug, Clone, Copy, Default)]
pub struct KgLimits {
    pub min_entities: usize,
    pub max_entities: Option<usize>,
    pub max_relations: Option<usize>,
}

/// Loads `kg_final.txt`-style triplets. Entity count is at least
/// `limits.min_entities` (so every item id is an entity).
pub fn load_kg(path: impl AsRef<Path>, add_inverse: bool, limits: KgLimits) -> Result<(KnowledgeGraph, KgStats)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    let (triplets, stats) = parse_kg(&text, path)?;
    let max_entity = triplets.iter().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0);
    let max_relation = triplets.iter().map(|t| t.relation + 1).max().unwrap_or(0);
    if let Some(limit) = limits.max_entities {
        if max_entity > limit {
            return Err(KgError::Validation(format!(
                "{}: entity id {} exceeds configured entity count {limit}",
                path.display(),
                max_entity - 1
            )));
        }
    }
    if let Some(limit) = limits.max_relations {
        if max_relation > limit {
            return Err(KgError::Validation(format!(
                "{}: relation id {} exceeds configured relation count {limit}",
                path.display(),
                max_relation - 1
            )));
        }
    }
    if stats.self_loops > 0 {
        log::warn!("{}: {} self-loop triplets retained", path.display(), stats.self_loops);
    }
    let num_entities = limits.max_entities.unwrap_or(max_entity).max(limits.min_entities);
    let num_relations = limits.max_relations.unwrap_or(max_relation);
    let kg = KnowledgeGraph::new(num_entities, num_relations, triplets, add_inverse)?;
    Ok((kg, stats))
}

/// Writes the base (non-inverse) triplets as `head relation tail` lines.
pub fn write_kg(kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(kg.base_triplets().len() * 12);
    for t in kg.base_triplets() {
        out.push_str(&format!("{} {} {}\n", t.head, t.relation, t.tail));
    }
    std::fs::write(path, out).map_err(|e| KgError::io(path, e))
}
