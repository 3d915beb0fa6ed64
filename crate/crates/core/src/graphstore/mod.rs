//! Interaction and knowledge graph storage: loading, validation, k-core
//! filtering and CSR neighbourhood access.

mod csr;
mod dataset;
mod filter;
mod interactions;
mod kg;

pub use csr::Csr;
pub use dataset::{split_per_user, Dataset, SplitFractions, KG_FILE};
pub use filter::{ten_core_filter, IdMapping};
pub use interactions::{load_interactions, parse_interactions, write_interactions, InteractionGraph, InteractionStats, Split};
pub use kg::{load_kg, parse_kg, write_kg, KgEdge, KgLimits, KgStats, KnowledgeGraph, Triplet, TripletId};
