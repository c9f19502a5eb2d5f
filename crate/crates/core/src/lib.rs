//! Multi-hop logical query answering over knowledge graphs with
//! geometric and probabilistic query embeddings.

pub mod autodiff;
pub mod backend;
pub mod context;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod query;
pub mod synthetic;
pub mod train;

pub use backend::{Backend, QueryEmbedding};
pub use context::{ContextFlags, StructureDims};
pub use error::{Error, ErrorClass, Result};
pub use eval::{EvalReport, Targets};
pub use kg::{EntityId, KgBuilder, KnowledgeGraph, RelationId, Side, Triple, Vocabulary};
pub use model::{Model, ModelConfig};
pub use oracle::{evaluate_answers, EntitySet, Grounder, GroundingOptions, QueryInstance};
pub use query::{ComputationGraph, CountTable, QueryGraph, QueryType, Role};
pub use train::{Precision, TrainConfig, Trainer};
