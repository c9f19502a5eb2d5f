//! Full query encoder: backend operators driven over a computation graph,
//! with optional context integration after every projection.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::backend::{
    beta_kl, beta_validity, box_distance, Backend, BetaOperators, BoxOperators, QueryEmbedding,
    DEFAULT_ALPHA_IN,
};
use crate::context::{
    variance_loss, ContextBundle, ContextFlags, ContextNet, RelationSampling, StructureDims,
};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::nn::uniform_matrix;
use crate::query::{ComputationGraph, QueryGraph};

/// Default number of sampled context entities per relation side.
pub const DEFAULT_CONTEXT_SAMPLES: usize = 120;
/// Default width of the position, role and type embeddings.
pub const DEFAULT_STRUCTURE_DIM: usize = 108;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backend: Backend,
    /// Embedding dimension `d`; query embeddings have width `2d`.
    pub dim: usize,
    pub structure: StructureDims,
    /// `None` runs the plain backend without context integration.
    pub context: Option<ContextFlags>,
    pub context_samples: usize,
    pub context_seed: u64,
    pub alpha_in: f64,
    /// Half-width of the uniform initialisation of embedding tables.
    pub init_range: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(backend: Backend, dim: usize) -> Self {
        ModelConfig {
            backend,
            dim,
            structure: StructureDims::uniform(DEFAULT_STRUCTURE_DIM),
            context: Some(ContextFlags::ALL),
            context_samples: DEFAULT_CONTEXT_SAMPLES,
            context_seed: 0,
            alpha_in: DEFAULT_ALPHA_IN,
            init_range: 1.0,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        let s = self.structure;
        if s.position == 0 || s.role == 0 || s.query_type == 0 {
            return bad("structure dims must be positive");
        }
        if !(self.alpha_in >= 0.0 && self.alpha_in.is_finite()) {
            return bad("alpha_in must be finite and nonnegative");
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return bad("init_range must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operators {
    Box(BoxOperators),
    Beta(BetaOperators),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    num_entities: usize,
    num_relations: usize,
    store: ParamStore,
    entity: ParamId,
    ops: Operators,
    context: Option<ContextNet>,
}

/// Per-call memo of context bundles keyed by query-graph node.
struct BundleCache {
    query_type: Option<Var>,
    bundles: HashMap<usize, ContextBundle>,
}

impl Model {
    /// Fresh model with parameters drawn from `config.init_seed`.
    pub fn new(config: ModelConfig, num_entities: usize, num_relations: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let width = config.backend.entity_width(d);
        let entity = store.add(
            "entity",
            uniform_matrix(&mut rng, num_entities, width, config.init_range),
        );
        let ops = match config.backend {
            Backend::Box => Operators::Box(BoxOperators::register(
                &mut store,
                &mut rng,
                num_relations,
                d,
                config.init_range,
            )),
            Backend::Beta => Operators::Beta(BetaOperators::register(
                &mut store,
                &mut rng,
                num_relations,
                d,
                config.init_range,
            )),
        };
        let context = config.context.map(|flags| {
            ContextNet::register(
                &mut store,
                &mut rng,
                config.structure,
                flags,
                width,
                config.backend.query_width(d),
            )
        });
        Ok(Model {
            config,
            num_entities,
            num_relations,
            store,
            entity,
            ops,
            context,
        })
    }

    /// Model with the layout implied by `config` and the given values.
    pub fn with_params(
        config: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        store: ParamStore,
    ) -> Result<Self> {
        let mut model = Model::new(config, num_entities, num_relations)?;
        if model.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for ((_, want_name, want), (_, name, got)) in model.store.iter().zip(store.iter()) {
            if want_name != name || want.shape() != got.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` {:?} does not match expected `{want_name}` {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backend(&self) -> Backend {
        self.config.backend
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn entity_table(&self) -> ParamId {
        self.entity
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn context_net(&self) -> Option<&ContextNet> {
        self.context.as_ref()
    }

    pub fn sampling(&self) -> RelationSampling {
        RelationSampling {
            entity_table: self.entity,
            backend: self.config.backend,
            k: self.config.context_samples,
            seed: self.config.context_seed,
        }
    }

    /// Entity embedding on the tape, mapped to a valid Beta for that backend.
    pub fn entity_embedding(&self, tape: &mut Tape, e: EntityId) -> Result<Var> {
        if e.0 >= self.num_entities {
            return Err(Error::IdOutOfRange {
                kind: "entity",
                id: e.0,
                size: self.num_entities,
            });
        }
        let row = tape.param_row(self.entity, e.0)?;
        Ok(match self.config.backend {
            Backend::Box => row,
            Backend::Beta => BetaOperators::validity(tape, row),
        })
    }

    /// Embeds every disjunct of `graph`. With `integrate`, each projection
    /// output is fused with the context of the node it produces.
    pub fn embed(
        &self,
        tape: &mut Tape,
        kg: &KnowledgeGraph,
        graph: &QueryGraph,
        integrate: bool,
    ) -> Result<Vec<Var>> {
        let cg = graph.to_computation_graph();
        if cg.contains_negation() && !self.config.backend.supports_negation() {
            let name = graph
                .query_type()
                .map_or("query".to_string(), |t| t.to_string());
            return Err(Error::NegationUnsupported(name));
        }
        let mut cache = BundleCache {
            query_type: None,
            bundles: HashMap::new(),
        };
        cg.to_dnf()?
            .iter()
            .map(|d| self.embed_tree(tape, kg, graph, d, integrate, &mut cache))
            .collect()
    }

    fn embed_tree(
        &self,
        tape: &mut Tape,
        kg: &KnowledgeGraph,
        graph: &QueryGraph,
        cg: &ComputationGraph,
        integrate: bool,
        cache: &mut BundleCache,
    ) -> Result<Var> {
        match cg {
            ComputationGraph::Anchor { entity, .. } => {
                let e = self.entity_embedding(tape, *entity)?;
                match &self.ops {
                    Operators::Box(ops) => ops.point(tape, e),
                    Operators::Beta(_) => Ok(e),
                }
            }
            ComputationGraph::Projection {
                relation,
                target,
                input,
            } => {
                let q = self.embed_tree(tape, kg, graph, input, integrate, cache)?;
                let q = match &self.ops {
                    Operators::Box(ops) => ops.project(tape, q, *relation)?,
                    Operators::Beta(ops) => ops.project(tape, q, *relation)?,
                };
                match (&self.context, integrate) {
                    (Some(net), true) => {
                        let bundle = self.bundle(tape, net, kg, graph, *target, cache)?;
                        net.integrate(tape, self.config.backend, q, &bundle)
                    }
                    _ => Ok(q),
                }
            }
            ComputationGraph::Intersection(children) => {
                let qs = children
                    .iter()
                    .map(|c| self.embed_tree(tape, kg, graph, c, integrate, cache))
                    .collect::<Result<Vec<_>>>()?;
                match &self.ops {
                    Operators::Box(ops) => ops.intersect(tape, &qs),
                    Operators::Beta(ops) => ops.intersect(tape, &qs),
                }
            }
            ComputationGraph::Union(_) => Err(Error::InvalidQueryGraph(
                "union left inside a disjunct".into(),
            )),
            ComputationGraph::Negation(inner) => {
                let q = self.embed_tree(tape, kg, graph, inner, integrate, cache)?;
                match &self.ops {
                    Operators::Beta(ops) => ops.negate(tape, q),
                    Operators::Box(_) => Err(Error::NegationUnsupported("negation".into())),
                }
            }
        }
    }

    fn bundle(
        &self,
        tape: &mut Tape,
        net: &ContextNet,
        kg: &KnowledgeGraph,
        graph: &QueryGraph,
        node: usize,
        cache: &mut BundleCache,
    ) -> Result<ContextBundle> {
        if let Some(b) = cache.bundles.get(&node) {
            return Ok(*b);
        }
        let g = match cache.query_type {
            Some(g) => g,
            None => {
                let g = net.type_embedding(tape, graph)?;
                cache.query_type = Some(g);
                g
            }
        };
        let b = net.bundle(tape, kg, graph, node, g, &self.sampling())?;
        cache.bundles.insert(node, b);
        Ok(b)
    }

    /// Backend distance between an entity embedding and one query embedding.
    pub fn distance(&self, tape: &mut Tape, entity: Var, q: Var) -> Result<Var> {
        match &self.ops {
            Operators::Box(ops) => ops.distance(tape, entity, q, self.config.alpha_in),
            Operators::Beta(ops) => ops.distance(tape, entity, q),
        }
    }

    /// Minimum distance of entity `e` over the disjuncts of a query.
    pub fn query_distance(&self, tape: &mut Tape, e: EntityId, disjuncts: &[Var]) -> Result<Var> {
        if disjuncts.is_empty() {
            return Err(Error::EmptyDisjuncts);
        }
        let emb = self.entity_embedding(tape, e)?;
        let ds = disjuncts
            .iter()
            .map(|&q| self.distance(tape, emb, q))
            .collect::<Result<Vec<_>>>()?;
        if ds.len() == 1 {
            Ok(ds[0])
        } else {
            tape.min_of(&ds)
        }
    }

    /// Mean over disjuncts of the variance shift caused by integration.
    /// Only defined for the Beta backend with context enabled.
    pub fn variance_loss(&self, tape: &mut Tape, plain: &[Var], integrated: &[Var]) -> Result<Var> {
        let Operators::Beta(ops) = &self.ops else {
            return Err(Error::VarianceOnBoxBackend);
        };
        let terms = plain
            .iter()
            .zip(integrated)
            .map(|(&q, &qi)| variance_loss(tape, ops, q, qi))
            .collect::<Result<Vec<_>>>()?;
        tape.mean(&terms)
    }

    /// Query embeddings (with integration) as plain values.
    pub fn answer_embeddings(
        &self,
        kg: &KnowledgeGraph,
        graph: &QueryGraph,
    ) -> Result<Vec<QueryEmbedding>> {
        let mut tape = Tape::new(&self.store);
        let qs = self.embed(&mut tape, kg, graph, true)?;
        Ok(qs
            .iter()
            .map(|&q| QueryEmbedding::from_flat(self.config.backend, tape.value(q).data()))
            .collect())
    }

    /// Entity table as used by distances: raw points for boxes, mapped
    /// parameters for Beta.
    pub fn entity_values(&self) -> Vec<f64> {
        let raw = self.store.get(self.entity).data();
        match self.config.backend {
            Backend::Box => raw.to_vec(),
            Backend::Beta => raw.iter().map(|&x| beta_validity(x)).collect(),
        }
    }

    /// Distance of every entity to a query given as disjunct embeddings.
    pub fn distances(&self, entity_values: &[f64], disjuncts: &[QueryEmbedding]) -> Vec<f64> {
        let width = self.config.backend.entity_width(self.config.dim);
        let d = self.config.dim;
        entity_values
            .chunks_exact(width)
            .map(|e| {
                let mut best = f64::INFINITY;
                for (k, q) in disjuncts.iter().enumerate() {
                    let dist = match q {
                        QueryEmbedding::Box(b) => {
                            box_distance(e, &b.center, &b.offset, self.config.alpha_in)
                        }
                        QueryEmbedding::Beta(b) => beta_kl(&e[..d], &e[d..], &b.alpha, &b.beta),
                    };
                    if k == 0 || dist < best {
                        best = dist;
                    }
                }
                best
            })
            .collect()
    }

    /// Distances of all entities to the answer of `graph`.
    pub fn score_all(&self, kg: &KnowledgeGraph, graph: &QueryGraph) -> Result<Vec<f64>> {
        let qs = self.answer_embeddings(kg, graph)?;
        Ok(self.distances(&self.entity_values(), &qs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QueryType;

    fn kg() -> KnowledgeGraph {
        KnowledgeGraph::parse("a\tr\tb\na\tr\tc\nb\ts\tc\nc\ts\td\nd\tr\ta\n", true).unwrap()
    }

    fn small(backend: Backend) -> ModelConfig {
        let mut c = ModelConfig::new(backend, 3);
        c.structure = StructureDims::uniform(2);
        c
    }

    #[test]
    fn plain_scoring_matches_tape() {
        let kg = kg();
        for backend in [Backend::Box, Backend::Beta] {
            let model = Model::new(small(backend), kg.num_entities(), kg.num_relations()).unwrap();
            let (a, b) = (kg.entity("a").unwrap(), kg.entity("b").unwrap());
            let (r, s) = (kg.relation("r").unwrap(), kg.relation("s").unwrap());
            let g = QueryGraph::build(QueryType::U2, &[a, b], &[r, s]).unwrap();
            let scores = model.score_all(&kg, &g).unwrap();
            let mut tape = Tape::new(model.store());
            let qs = model.embed(&mut tape, &kg, &g, true).unwrap();
            for (e, &score) in scores.iter().enumerate() {
                let d = model.query_distance(&mut tape, EntityId(e), &qs).unwrap();
                assert_eq!(tape.scalar_value(d), score, "{backend} entity {e}");
            }
        }
    }

    #[test]
    fn box_rejects_negation() {
        let kg = kg();
        let model = Model::new(small(Backend::Box), kg.num_entities(), kg.num_relations()).unwrap();
        let a = kg.entity("a").unwrap();
        let r = kg.relation("r").unwrap();
        let g = QueryGraph::build(QueryType::In2, &[a, a], &[r, r]).unwrap();
        let mut tape = Tape::new(model.store());
        assert!(matches!(
            model.embed(&mut tape, &kg, &g, true),
            Err(Error::NegationUnsupported(t)) if t == "2in"
        ));
    }

    #[test]
    fn empty_disjuncts() {
        let kg = kg();
        let model =
            Model::new(small(Backend::Beta), kg.num_entities(), kg.num_relations()).unwrap();
        let mut tape = Tape::new(model.store());
        assert!(matches!(
            model.query_distance(&mut tape, EntityId(0), &[]),
            Err(Error::EmptyDisjuncts)
        ));
    }

    #[test]
    fn with_params_rejects_other_layout() {
        let kg = kg();
        let a = Model::new(small(Backend::Box), kg.num_entities(), kg.num_relations()).unwrap();
        let b = Model::new(small(Backend::Beta), kg.num_entities(), kg.num_relations()).unwrap();
        assert!(Model::with_params(*a.config(), 5, kg.num_relations(), b.store().clone()).is_err());
        let same = Model::with_params(
            *a.config(),
            kg.num_entities(),
            kg.num_relations(),
            a.store().clone(),
        )
        .unwrap();
        assert_eq!(same, a);
    }
}
