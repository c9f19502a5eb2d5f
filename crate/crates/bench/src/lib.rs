//! Shared fixtures for the criterion benchmarks.

use qembed_core::{Backend, KnowledgeGraph, Model, ModelConfig, StructureDims};

/// A graph dense enough that every relation has more than 480 endpoints
/// on each side.
pub fn dense_graph() -> KnowledgeGraph {
    qembed_core::synthetic::random_kg(3000, 4, 60_000, 0).expect("synthetic graph")
}

pub fn model(kg: &KnowledgeGraph, backend: Backend, dim: usize, context_samples: usize) -> Model {
    let mut config = ModelConfig::new(backend, dim);
    config.structure = StructureDims::uniform(16);
    config.context_samples = context_samples;
    Model::new(config, kg.num_entities(), kg.num_relations()).expect("model")
}
