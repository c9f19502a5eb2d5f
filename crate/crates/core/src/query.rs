//! The fourteen query templates, their query graphs, and compilation into
//! operator trees.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

/// Largest canonical position a node may take.
pub const MAX_POSITION: usize = 3;
/// Normaliser for type vectors: the largest node count over all templates.
pub const TYPE_NORMALISER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

impl QueryType {
    pub const ALL: [QueryType; 14] = [
        QueryType::P1,
        QueryType::P2,
        QueryType::P3,
        QueryType::I2,
        QueryType::I3,
        QueryType::Pi,
        QueryType::Ip,
        QueryType::U2,
        QueryType::Up,
        QueryType::In2,
        QueryType::In3,
        QueryType::Inp,
        QueryType::Pin,
        QueryType::Pni,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::P1 => "1p",
            QueryType::P2 => "2p",
            QueryType::P3 => "3p",
            QueryType::I2 => "2i",
            QueryType::I3 => "3i",
            QueryType::Pi => "pi",
            QueryType::Ip => "ip",
            QueryType::U2 => "2u",
            QueryType::Up => "up",
            QueryType::In2 => "2in",
            QueryType::In3 => "3in",
            QueryType::Inp => "inp",
            QueryType::Pin => "pin",
            QueryType::Pni => "pni",
        }
    }

    pub fn num_anchors(self) -> usize {
        self.template().anchors
    }

    pub fn num_relations(self) -> usize {
        self.template().edges.len()
    }

    pub fn has_negation(self) -> bool {
        self.template().edges.iter().any(|e| e.3)
    }

    pub fn has_union(self) -> bool {
        matches!(self, QueryType::U2 | QueryType::Up)
    }

    fn template(self) -> Template {
        use Slot::*;
        const I: JoinKind = JoinKind::Intersection;
        const U: JoinKind = JoinKind::Union;
        // (src, dst, relation slot, negated); nodes listed in graph order.
        match self {
            QueryType::P1 => Template::new(&[A(0), Ans(I)], &[(0, 1, 0, false)]),
            QueryType::P2 => Template::new(
                &[A(0), Var(I), Ans(I)],
                &[(0, 1, 0, false), (1, 2, 1, false)],
            ),
            QueryType::P3 => Template::new(
                &[A(0), Var(I), Var(I), Ans(I)],
                &[(0, 1, 0, false), (1, 2, 1, false), (2, 3, 2, false)],
            ),
            QueryType::I2 | QueryType::U2 | QueryType::In2 => Template::new(
                &[A(0), A(1), Ans(if self == QueryType::U2 { U } else { I })],
                &[(0, 2, 0, false), (1, 2, 1, self == QueryType::In2)],
            ),
            QueryType::I3 | QueryType::In3 => Template::new(
                &[A(0), A(1), A(2), Ans(I)],
                &[
                    (0, 3, 0, false),
                    (1, 3, 1, false),
                    (2, 3, 2, self == QueryType::In3),
                ],
            ),
            QueryType::Ip | QueryType::Up | QueryType::Inp => Template::new(
                &[
                    A(0),
                    A(1),
                    Var(if self == QueryType::Up { U } else { I }),
                    Ans(I),
                ],
                &[
                    (0, 2, 0, false),
                    (1, 2, 1, self == QueryType::Inp),
                    (2, 3, 2, false),
                ],
            ),
            QueryType::Pi | QueryType::Pin | QueryType::Pni => Template::new(
                &[A(0), Var(I), A(1), Ans(I)],
                &[
                    (0, 1, 0, false),
                    (1, 3, 1, self == QueryType::Pni),
                    (2, 3, 2, self == QueryType::Pin),
                ],
            ),
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownQueryType(s.to_string()))
    }
}

#[derive(Clone, Copy)]
enum Slot {
    A(usize),
    Var(JoinKind),
    Ans(JoinKind),
}

struct Template {
    anchors: usize,
    nodes: Vec<Slot>,
    edges: Vec<(usize, usize, usize, bool)>,
}

impl Template {
    fn new(nodes: &[Slot], edges: &[(usize, usize, usize, bool)]) -> Self {
        Template {
            anchors: nodes.iter().filter(|s| matches!(s, Slot::A(_))).count(),
            nodes: nodes.to_vec(),
            edges: edges.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Anchor = 0,
    Variable = 1,
    Answer = 2,
}

impl Role {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// How a node with several incoming branches combines them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    Intersection,
    Union,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryNode {
    pub role: Role,
    pub position: usize,
    pub entity: Option<EntityId>,
    pub join: JoinKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationId,
    pub negated: bool,
}

/// Node description used to assemble a graph; positions are derived.
#[derive(Debug, Clone, Copy)]
pub struct NodeSpec {
    pub role: Role,
    pub entity: Option<EntityId>,
    pub join: JoinKind,
}

/// A query graph: anchors, variables and one answer node joined by
/// relation edges that may be negated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGraph {
    query_type: Option<QueryType>,
    nodes: Vec<QueryNode>,
    edges: Vec<QueryEdge>,
    answer: usize,
}

impl QueryGraph {
    /// Instantiates template `t` with the given anchors and relations.
    pub fn build(t: QueryType, anchors: &[EntityId], relations: &[RelationId]) -> Result<Self> {
        let tpl = t.template();
        if anchors.len() != tpl.anchors || relations.len() != tpl.edges.len() {
            return Err(Error::ArityMismatch {
                query_type: t.name().to_string(),
                expected_anchors: tpl.anchors,
                expected_relations: tpl.edges.len(),
                anchors: anchors.len(),
                relations: relations.len(),
            });
        }
        let specs: Vec<NodeSpec> = tpl
            .nodes
            .iter()
            .map(|slot| match *slot {
                Slot::A(i) => NodeSpec {
                    role: Role::Anchor,
                    entity: Some(anchors[i]),
                    join: JoinKind::Intersection,
                },
                Slot::Var(join) => NodeSpec {
                    role: Role::Variable,
                    entity: None,
                    join,
                },
                Slot::Ans(join) => NodeSpec {
                    role: Role::Answer,
                    entity: None,
                    join,
                },
            })
            .collect();
        let edges: Vec<QueryEdge> = tpl
            .edges
            .iter()
            .map(|&(src, dst, slot, negated)| QueryEdge {
                src,
                dst,
                relation: relations[slot],
                negated,
            })
            .collect();
        let mut g = QueryGraph::from_parts(&specs, edges)?;
        g.query_type = Some(t);
        Ok(g)
    }

    /// Like [`QueryGraph::build`], additionally checking ids against `kg`.
    pub fn build_in(
        kg: &KnowledgeGraph,
        t: QueryType,
        anchors: &[EntityId],
        relations: &[RelationId],
    ) -> Result<Self> {
        for &a in anchors {
            if a.0 >= kg.num_entities() {
                return Err(Error::UnknownEntity(a.to_string()));
            }
        }
        for &r in relations {
            if r.0 >= kg.num_relations() {
                return Err(Error::UnknownRelation(r.to_string()));
            }
        }
        Self::build(t, anchors, relations)
    }

    /// Assembles an arbitrary graph, validating the structural invariants
    /// and assigning each node the length of its longest incoming
    /// anchor path as its position.
    pub fn from_parts(specs: &[NodeSpec], edges: Vec<QueryEdge>) -> Result<Self> {
        let n = specs.len();
        let invalid = |msg: String| Err(Error::InvalidQueryGraph(msg));
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::NodeNotFound(e.src.max(e.dst)));
            }
        }
        let indeg = |v: usize| edges.iter().filter(|e| e.dst == v).count();
        let outdeg = |v: usize| edges.iter().filter(|e| e.src == v).count();
        let answers: Vec<usize> = (0..n).filter(|&v| specs[v].role == Role::Answer).collect();
        if answers.len() != 1 {
            return invalid(format!("expected one answer node, found {}", answers.len()));
        }
        for (v, s) in specs.iter().enumerate() {
            let ok = match s.role {
                Role::Anchor => indeg(v) == 0 && outdeg(v) >= 1 && s.entity.is_some(),
                Role::Variable => indeg(v) >= 1 && outdeg(v) >= 1,
                Role::Answer => indeg(v) >= 1 && outdeg(v) == 0,
            };
            if !ok {
                return invalid(format!("node {v} violates the {:?} degree rules", s.role));
            }
        }

        // Longest-path positions by repeated relaxation in topological order.
        let mut position = vec![0usize; n];
        let mut remaining: Vec<usize> = (0..n).map(indeg).collect();
        let mut ready: Vec<usize> = (0..n).filter(|&v| remaining[v] == 0).collect();
        let mut visited = 0;
        while let Some(v) = ready.pop() {
            visited += 1;
            for e in edges.iter().filter(|e| e.src == v) {
                position[e.dst] = position[e.dst].max(position[v] + 1);
                remaining[e.dst] -= 1;
                if remaining[e.dst] == 0 {
                    ready.push(e.dst);
                }
            }
        }
        if visited != n {
            return invalid("graph has a cycle".into());
        }

        let nodes = specs
            .iter()
            .zip(position)
            .map(|(s, position)| QueryNode {
                role: s.role,
                position,
                entity: s.entity,
                join: s.join,
            })
            .collect();
        Ok(QueryGraph {
            query_type: None,
            nodes,
            edges,
            answer: answers[0],
        })
    }

    pub fn query_type(&self) -> Option<QueryType> {
        self.query_type
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[QueryEdge] {
        &self.edges
    }

    pub fn answer(&self) -> usize {
        self.answer
    }

    pub fn node(&self, v: usize) -> Result<&QueryNode> {
        self.nodes.get(v).ok_or(Error::NodeNotFound(v))
    }

    /// Relations on edges entering and leaving `v`.
    pub fn node_relation_sets(
        &self,
        v: usize,
    ) -> Result<(BTreeSet<RelationId>, BTreeSet<RelationId>)> {
        self.node(v)?;
        let incoming = self
            .edges
            .iter()
            .filter(|e| e.dst == v)
            .map(|e| e.relation)
            .collect();
        let outgoing = self
            .edges
            .iter()
            .filter(|e| e.src == v)
            .map(|e| e.relation)
            .collect();
        Ok((incoming, outgoing))
    }

    /// Counts of (role, position) pairs over all nodes.
    pub fn count_table(&self) -> Result<CountTable> {
        let mut counts = [[0u32; MAX_POSITION + 1]; 3];
        for node in &self.nodes {
            if node.position > MAX_POSITION {
                return Err(Error::PositionOverflow(node.position));
            }
            counts[node.role.index()][node.position] += 1;
        }
        Ok(CountTable { counts })
    }

    /// Compiles the graph into an operator tree rooted at the answer.
    pub fn to_computation_graph(&self) -> ComputationGraph {
        self.compile(self.answer)
    }

    fn compile(&self, v: usize) -> ComputationGraph {
        let node = &self.nodes[v];
        if let Some(entity) = node.entity.filter(|_| node.role == Role::Anchor) {
            return ComputationGraph::Anchor { entity, node: v };
        }
        let mut branches: Vec<ComputationGraph> = self
            .edges
            .iter()
            .filter(|e| e.dst == v)
            .map(|e| {
                let proj = ComputationGraph::Projection {
                    relation: e.relation,
                    target: v,
                    input: Box::new(self.compile(e.src)),
                };
                if e.negated {
                    ComputationGraph::Negation(Box::new(proj))
                } else {
                    proj
                }
            })
            .collect();
        if branches.len() == 1 {
            branches.pop().expect("one branch")
        } else {
            match node.join {
                JoinKind::Intersection => ComputationGraph::Intersection(branches),
                JoinKind::Union => ComputationGraph::Union(branches),
            }
        }
    }
}

/// Operator tree. Projection nodes remember which query-graph node they
/// produce so that per-node context can be attached to them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComputationGraph {
    Anchor {
        entity: EntityId,
        node: usize,
    },
    Projection {
        relation: RelationId,
        target: usize,
        input: Box<ComputationGraph>,
    },
    Intersection(Vec<ComputationGraph>),
    Union(Vec<ComputationGraph>),
    Negation(Box<ComputationGraph>),
}

impl ComputationGraph {
    pub fn anchor(entity: EntityId, node: usize) -> Self {
        ComputationGraph::Anchor { entity, node }
    }

    pub fn project(relation: RelationId, target: usize, input: ComputationGraph) -> Self {
        ComputationGraph::Projection {
            relation,
            target,
            input: Box::new(input),
        }
    }

    pub fn negate(input: ComputationGraph) -> Self {
        ComputationGraph::Negation(Box::new(input))
    }

    pub fn contains_negation(&self) -> bool {
        match self {
            ComputationGraph::Anchor { .. } => false,
            ComputationGraph::Negation(_) => true,
            ComputationGraph::Projection { input, .. } => input.contains_negation(),
            ComputationGraph::Intersection(c) | ComputationGraph::Union(c) => {
                c.iter().any(|c| c.contains_negation())
            }
        }
    }

    pub fn contains_union(&self) -> bool {
        match self {
            ComputationGraph::Anchor { .. } => false,
            ComputationGraph::Union(_) => true,
            ComputationGraph::Projection { input, .. } | ComputationGraph::Negation(input) => {
                input.contains_union()
            }
            ComputationGraph::Intersection(c) => c.iter().any(|c| c.contains_union()),
        }
    }

    /// Rewrites the tree into union-free disjuncts whose answer sets union to
    /// the original's. Unions below a negation are rejected.
    pub fn to_dnf(&self) -> Result<Vec<ComputationGraph>> {
        Ok(match self {
            ComputationGraph::Anchor { .. } => vec![self.clone()],
            ComputationGraph::Projection {
                relation,
                target,
                input,
            } => input
                .to_dnf()?
                .into_iter()
                .map(|d| ComputationGraph::project(*relation, *target, d))
                .collect(),
            ComputationGraph::Negation(input) => {
                let mut inner = input.to_dnf()?;
                if inner.len() != 1 {
                    return Err(Error::UnsupportedUnionShape);
                }
                vec![ComputationGraph::negate(inner.pop().expect("one disjunct"))]
            }
            ComputationGraph::Union(children) => {
                let mut out = Vec::new();
                for c in children {
                    out.extend(c.to_dnf()?);
                }
                out
            }
            ComputationGraph::Intersection(children) => {
                let mut acc: Vec<Vec<ComputationGraph>> = vec![Vec::new()];
                for c in children {
                    let parts = c.to_dnf()?;
                    acc = acc
                        .into_iter()
                        .flat_map(|prefix| {
                            parts.iter().map(move |p| {
                                let mut next = prefix.clone();
                                next.push(p.clone());
                                next
                            })
                        })
                        .collect();
                }
                acc.into_iter()
                    .map(ComputationGraph::Intersection)
                    .collect()
            }
        })
    }
}

/// Number of nodes per (role, position) pair; rows are roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CountTable {
    pub counts: [[u32; MAX_POSITION + 1]; 3],
}

impl CountTable {
    pub fn get(&self, role: Role, position: usize) -> u32 {
        self.counts[role.index()][position]
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }

    /// Row-major flatten divided by the template-wide maximum node count.
    pub fn type_vector(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (slot, &c) in out.iter_mut().zip(self.counts.iter().flatten()) {
            *slot = f64::from(c) / TYPE_NORMALISER;
        }
        out
    }
}
