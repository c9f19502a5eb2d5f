//! Exact set-semantics evaluation of operator trees, plus query grounding
//! and easy/hard answer labelling.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::query::{ComputationGraph, QueryGraph, QueryType, Role};

pub type EntitySet = BTreeSet<EntityId>;

/// Exact answers of `cg` over `kg`.
pub fn evaluate_answers(kg: &KnowledgeGraph, cg: &ComputationGraph) -> Result<EntitySet> {
    Ok(match cg {
        ComputationGraph::Anchor { entity, .. } => {
            kg.check_entity(*entity)?;
            EntitySet::from([*entity])
        }
        ComputationGraph::Projection {
            relation, input, ..
        } => {
            let mut out = EntitySet::new();
            for v in evaluate_answers(kg, input)? {
                out.extend(kg.neighbor_slice(v, *relation)?.iter().map(|t| t.tail));
            }
            out
        }
        ComputationGraph::Intersection(children) => {
            let mut sets = children
                .iter()
                .map(|c| evaluate_answers(kg, c))
                .collect::<Result<Vec<_>>>()?;
            sets.sort_by_key(|s| s.len());
            let mut iter = sets.into_iter();
            let first = iter.next().unwrap_or_default();
            iter.fold(first, |acc, s| acc.intersection(&s).copied().collect())
        }
        ComputationGraph::Union(children) => {
            let mut out = EntitySet::new();
            for c in children {
                out.extend(evaluate_answers(kg, c)?);
            }
            out
        }
        ComputationGraph::Negation(input) => {
            let inner = evaluate_answers(kg, input)?;
            (0..kg.num_entities())
                .map(EntityId)
                .filter(|e| !inner.contains(e))
                .collect()
        }
    })
}

/// A grounded query with its answers split by which graph derives them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryInstance {
    pub query_type: QueryType,
    pub anchors: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    /// Answers derivable from the training graph.
    pub easy: EntitySet,
    /// Answers only derivable from the full graph.
    pub hard: EntitySet,
}

impl QueryInstance {
    pub fn new(query_type: QueryType, anchors: Vec<EntityId>, relations: Vec<RelationId>) -> Self {
        QueryInstance {
            query_type,
            anchors,
            relations,
            easy: EntitySet::new(),
            hard: EntitySet::new(),
        }
    }

    pub fn graph(&self) -> Result<QueryGraph> {
        QueryGraph::build(self.query_type, &self.anchors, &self.relations)
    }

    pub fn all_answers(&self) -> EntitySet {
        self.easy.union(&self.hard).copied().collect()
    }

    /// True when neither graph yields an answer.
    pub fn is_degenerate(&self) -> bool {
        self.easy.is_empty() && self.hard.is_empty()
    }
}

/// Recomputes easy and hard answers of `inst` against the two graphs.
pub fn label_easy_hard(
    kg_train: &KnowledgeGraph,
    kg_full: &KnowledgeGraph,
    inst: &QueryInstance,
) -> Result<QueryInstance> {
    for &r in &inst.relations {
        if r.0 >= kg_train.num_relations() || r.0 >= kg_full.num_relations() {
            return Err(Error::UnknownRelation(r.to_string()));
        }
    }
    let cg = inst.graph()?.to_computation_graph();
    let easy = evaluate_answers(kg_train, &cg)?;
    let full = evaluate_answers(kg_full, &cg)?;
    let hard = full.difference(&easy).copied().collect();
    Ok(QueryInstance {
        easy,
        hard,
        ..inst.clone()
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GroundingOptions {
    pub max_tries: usize,
    /// Reject instances whose hard-answer set is empty (valid/test splits).
    pub require_hard: bool,
}

impl Default for GroundingOptions {
    fn default() -> Self {
        GroundingOptions {
            max_tries: 100,
            require_hard: false,
        }
    }
}

/// Samples queries by walking backwards from a sampled answer.
pub struct Grounder<'a> {
    kg_train: &'a KnowledgeGraph,
    kg_full: &'a KnowledgeGraph,
    /// `incoming[t]` lists `(head, relation)` of every full-graph edge into `t`.
    incoming: Vec<Vec<(EntityId, RelationId)>>,
    targets: Vec<EntityId>,
}

impl<'a> Grounder<'a> {
    pub fn new(kg_train: &'a KnowledgeGraph, kg_full: &'a KnowledgeGraph) -> Self {
        let mut incoming = vec![Vec::new(); kg_full.num_entities()];
        for t in kg_full.triples() {
            incoming[t.tail.0].push((t.head, t.relation));
        }
        let targets = (0..incoming.len())
            .filter(|&i| !incoming[i].is_empty())
            .map(EntityId)
            .collect();
        Grounder {
            kg_train,
            kg_full,
            incoming,
            targets,
        }
    }

    pub fn ground<R: Rng + ?Sized>(
        &self,
        t: QueryType,
        rng: &mut R,
        opts: GroundingOptions,
    ) -> Result<QueryInstance> {
        let skeleton = QueryGraph::build(
            t,
            &vec![EntityId(0); t.num_anchors()],
            &vec![RelationId(0); t.num_relations()],
        )?;
        for _ in 0..opts.max_tries {
            if let Some(inst) = self.attempt(t, &skeleton, rng, opts)? {
                return Ok(inst);
            }
        }
        Err(Error::GroundingFailed {
            query_type: t.name().to_string(),
            tries: opts.max_tries,
        })
    }

    fn attempt<R: Rng + ?Sized>(
        &self,
        t: QueryType,
        skeleton: &QueryGraph,
        rng: &mut R,
        opts: GroundingOptions,
    ) -> Result<Option<QueryInstance>> {
        let Some(&target) = self.targets.choose(rng) else {
            return Ok(None);
        };
        let mut anchors = vec![EntityId(0); t.num_anchors()];
        let mut relations = vec![RelationId(0); t.num_relations()];
        if !self.walk_back(
            skeleton,
            skeleton.answer(),
            target,
            rng,
            &mut anchors,
            &mut relations,
        ) {
            return Ok(None);
        }
        let inst = QueryInstance::new(t, anchors, relations);
        let cg = inst.graph()?.to_computation_graph();
        let full = evaluate_answers(self.kg_full, &cg)?;
        if full.is_empty() {
            return Ok(None);
        }
        if cg.contains_negation() {
            // The negated branch has to remove at least one candidate.
            let positive = evaluate_answers(self.kg_full, &drop_negated_branches(&cg))?;
            if positive.len() <= full.len() {
                return Ok(None);
            }
        }
        let easy = evaluate_answers(self.kg_train, &cg)?;
        let hard: EntitySet = full.difference(&easy).copied().collect();
        if opts.require_hard && hard.is_empty() {
            return Ok(None);
        }
        Ok(Some(QueryInstance { easy, hard, ..inst }))
    }

    fn walk_back<R: Rng + ?Sized>(
        &self,
        g: &QueryGraph,
        v: usize,
        target: EntityId,
        rng: &mut R,
        anchors: &mut [EntityId],
        relations: &mut [RelationId],
    ) -> bool {
        for (slot, edge) in g.edges().iter().enumerate().filter(|(_, e)| e.dst == v) {
            // A negated branch is grounded around an unrelated entity.
            let here = if edge.negated {
                match self.targets.choose(rng) {
                    Some(&e) => e,
                    None => return false,
                }
            } else {
                target
            };
            let Some(&(head, rel)) = self.incoming[here.0].choose(rng) else {
                return false;
            };
            relations[slot] = rel;
            if g.nodes()[edge.src].role == Role::Anchor {
                let idx = g.nodes()[..edge.src]
                    .iter()
                    .filter(|n| n.role == Role::Anchor)
                    .count();
                anchors[idx] = head;
            } else if !self.walk_back(g, edge.src, head, rng, anchors, relations) {
                return false;
            }
        }
        true
    }
}

/// Removes negated children from intersections, keeping the positive part.
fn drop_negated_branches(cg: &ComputationGraph) -> ComputationGraph {
    match cg {
        ComputationGraph::Intersection(children) => {
            let kept: Vec<_> = children
                .iter()
                .filter(|c| !matches!(c, ComputationGraph::Negation(_)))
                .map(drop_negated_branches)
                .collect();
            match kept.len() {
                0 => cg.clone(),
                1 => kept.into_iter().next().expect("one child"),
                _ => ComputationGraph::Intersection(kept),
            }
        }
        ComputationGraph::Projection {
            relation,
            target,
            input,
        } => ComputationGraph::project(*relation, *target, drop_negated_branches(input)),
        other => other.clone(),
    }
}

/// One-shot grounding; prefer [`Grounder`] when sampling many queries.
pub fn ground_query<R: Rng + ?Sized>(
    kg_train: &KnowledgeGraph,
    kg_full: &KnowledgeGraph,
    t: QueryType,
    rng: &mut R,
    max_tries: usize,
) -> Result<QueryInstance> {
    Grounder::new(kg_train, kg_full).ground(
        t,
        rng,
        GroundingOptions {
            max_tries,
            require_hard: false,
        },
    )
}
