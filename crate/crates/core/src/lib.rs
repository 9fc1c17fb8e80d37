//! Unified-graph recommendation: directed knowledge and interaction relations
//! modeled by translation between relation-specific projections, undirected
//! item co-occurrence relations modeled on relation hyperplanes, both gated by
//! a head-tail attention vector and trained jointly with pairwise hinge losses.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grad;
pub mod graph;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use graph::{
    filter_min_interactions, leave_one_out_split, parse_triplet_file, DataSplit, Directedness,
    EntityId, EntityKind, RelationCatalog, RelationDef, RelationId, Triplet, UnifiedGraph,
    Vocabulary,
};
pub use model::{ModelConfig, ModelParams, UndirectedScorer};
