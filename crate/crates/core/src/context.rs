//! Context-aware query representation.
//!
//! Every projection output is fused with a per-node context bundle made of
//! a position embedding, a role embedding, a whole-query type embedding and
//! the mean embedding of entities that the node's incident relations touch
//! in the knowledge graph. The fused vector is mapped back to the backend's
//! query width and through the backend validity mapping.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::backend::{apply_validity, Backend, BetaOperators};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Side};
use crate::nn::{glorot, Mlp};
use crate::query::{QueryGraph, MAX_POSITION};

/// Which bundle slots feed the integration network. Disabled slots are
/// replaced by zeros of the same width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextFlags {
    pub use_position: bool,
    pub use_role: bool,
    pub use_type: bool,
    pub use_relation_induced: bool,
}

impl ContextFlags {
    pub const ALL: ContextFlags = ContextFlags {
        use_position: true,
        use_role: true,
        use_type: true,
        use_relation_induced: true,
    };
    /// Structural context only.
    pub const STRUCTURE: ContextFlags = ContextFlags {
        use_position: true,
        use_role: true,
        use_type: true,
        use_relation_induced: false,
    };
    /// Relation-induced context only.
    pub const RELATION: ContextFlags = ContextFlags {
        use_position: false,
        use_role: false,
        use_type: false,
        use_relation_induced: true,
    };
    pub const NONE: ContextFlags = ContextFlags {
        use_position: false,
        use_role: false,
        use_type: false,
        use_relation_induced: false,
    };
}

impl Default for ContextFlags {
    fn default() -> Self {
        ContextFlags::ALL
    }
}

/// Widths of the structural embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureDims {
    pub position: usize,
    pub role: usize,
    pub query_type: usize,
}

impl StructureDims {
    pub fn uniform(d: usize) -> Self {
        StructureDims {
            position: d,
            role: d,
            query_type: d,
        }
    }
}

/// Inputs to one integration step.
#[derive(Debug, Clone, Copy)]
pub struct ContextBundle {
    pub position: Var,
    pub role: Var,
    pub query_type: Var,
    pub relation_induced: Var,
}

/// Where and how relation-induced context is sampled.
#[derive(Debug, Clone, Copy)]
pub struct RelationSampling {
    pub entity_table: ParamId,
    pub backend: Backend,
    pub k: usize,
    pub seed: u64,
}

/// Structure tables plus the integration network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextNet {
    pub dims: StructureDims,
    pub flags: ContextFlags,
    pub entity_width: usize,
    pub query_width: usize,
    /// `[4, d_pos]`.
    pub position: ParamId,
    /// `[3, d_rol]`, rows anchor, variable, answer.
    pub role: ParamId,
    /// `[d_type, 12]` map from the normalised count table.
    pub type_map: ParamId,
    pub query_mlp: Mlp,
    pub context_mlp: Mlp,
    /// `[query_width, 2 query_width]`, no bias.
    pub output: ParamId,
}

impl ContextNet {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        dims: StructureDims,
        flags: ContextFlags,
        entity_width: usize,
        query_width: usize,
    ) -> Self {
        let position = store.add(
            "context.position",
            glorot(rng, MAX_POSITION + 1, dims.position),
        );
        let role = store.add("context.role", glorot(rng, 3, dims.role));
        let type_map = store.add("context.type_map", glorot(rng, dims.query_type, 12));
        let query_mlp = Mlp::register(
            store,
            rng,
            "context.query_mlp",
            query_width,
            query_width,
            query_width,
        );
        let bundle_width = dims.position + dims.role + dims.query_type + entity_width;
        let context_mlp = Mlp::register(
            store,
            rng,
            "context.context_mlp",
            bundle_width,
            query_width,
            query_width,
        );
        let output = store.add("context.output", glorot(rng, query_width, 2 * query_width));
        ContextNet {
            dims,
            flags,
            entity_width,
            query_width,
            position,
            role,
            type_map,
            query_mlp,
            context_mlp,
            output,
        }
    }

    /// Query-type embedding shared by every node of `graph`.
    pub fn type_embedding(&self, tape: &mut Tape, graph: &QueryGraph) -> Result<Var> {
        let table = graph.count_table()?;
        let tv = tape.constant_vector(table.type_vector().to_vec());
        let w = tape.param(self.type_map);
        tape.matvec(w, tv)
    }

    /// Position and role embeddings of node `v`.
    pub fn structure_context(
        &self,
        tape: &mut Tape,
        graph: &QueryGraph,
        v: usize,
    ) -> Result<(Var, Var)> {
        let node = graph.node(v)?;
        if node.position > MAX_POSITION {
            return Err(Error::PositionOverflow(node.position));
        }
        let p = tape.param_row(self.position, node.position)?;
        let r = tape.param_row(self.role, node.role.index())?;
        Ok((p, r))
    }

    /// Assembles the bundle for node `v`, zeroing disabled slots.
    /// `query_type` is the graph's shared type embedding.
    pub fn bundle(
        &self,
        tape: &mut Tape,
        kg: &KnowledgeGraph,
        graph: &QueryGraph,
        v: usize,
        query_type: Var,
        sampling: &RelationSampling,
    ) -> Result<ContextBundle> {
        let f = self.flags;
        let (p, r) = self.structure_context(tape, graph, v)?;
        let position = if f.use_position {
            p
        } else {
            zeros(tape, self.dims.position)
        };
        let role = if f.use_role {
            r
        } else {
            zeros(tape, self.dims.role)
        };
        let query_type = if f.use_type {
            query_type
        } else {
            zeros(tape, self.dims.query_type)
        };
        let relation_induced = if f.use_relation_induced {
            relation_induced_embedding(tape, kg, graph, v, sampling)?
        } else {
            zeros(tape, self.entity_width)
        };
        Ok(ContextBundle {
            position,
            role,
            query_type,
            relation_induced,
        })
    }

    /// Fuses a projected query embedding with its node's context.
    pub fn integrate(
        &self,
        tape: &mut Tape,
        backend: Backend,
        q: Var,
        bundle: &ContextBundle,
    ) -> Result<Var> {
        let width = tape.value(q).len();
        if width != self.query_width {
            return Err(Error::DimMismatch {
                expected: self.query_width,
                got: width,
            });
        }
        let got = tape.value(bundle.relation_induced).len();
        if got != self.entity_width {
            return Err(Error::DimMismatch {
                expected: self.entity_width,
                got,
            });
        }
        let hq = self.query_mlp.forward(tape, q)?;
        let ctx = tape.concat(&[
            bundle.position,
            bundle.role,
            bundle.query_type,
            bundle.relation_induced,
        ])?;
        let hc = self.context_mlp.forward(tape, ctx)?;
        let joined = tape.concat(&[hq, hc])?;
        let w = tape.param(self.output);
        let raw = tape.matvec(w, joined)?;
        apply_validity(tape, backend, raw)
    }
}

fn zeros(tape: &mut Tape, n: usize) -> Var {
    tape.constant(Tensor::zeros(&[n]))
}

/// Entities sampled for one side of node `v`: tails of incoming relations
/// or heads of outgoing ones, merged as a set.
pub fn sampled_context_entities(
    kg: &KnowledgeGraph,
    graph: &QueryGraph,
    v: usize,
    k: usize,
    seed: u64,
) -> Result<(Vec<EntityId>, Vec<EntityId>)> {
    let (incoming, outgoing) = graph.node_relation_sets(v)?;
    if incoming.is_empty() && outgoing.is_empty() {
        return Err(Error::NoIncidentRelations);
    }
    let gather = |rels: &BTreeSet<_>, side: Side| -> Result<Vec<EntityId>> {
        let mut set = BTreeSet::new();
        for &r in rels {
            set.extend(kg.sample_context_ids(r, side, k, seed)?.iter().copied());
        }
        Ok(set.into_iter().collect())
    };
    Ok((
        gather(&incoming, Side::Tail)?,
        gather(&outgoing, Side::Head)?,
    ))
}

/// Mean entity embedding over the sampled context of node `v`; the two
/// sides are averaged when both are present. For the Beta backend the
/// entity validity mapping is applied before averaging. Returns zeros
/// when no entity is sampled at all (only possible with `k = 0`).
pub fn relation_induced_embedding(
    tape: &mut Tape,
    kg: &KnowledgeGraph,
    graph: &QueryGraph,
    v: usize,
    sampling: &RelationSampling,
) -> Result<Var> {
    let (tails, heads) = sampled_context_entities(kg, graph, v, sampling.k, sampling.seed)?;
    let mut sides = Vec::with_capacity(2);
    for ids in [tails, heads] {
        if ids.is_empty() {
            continue;
        }
        let rows: Vec<usize> = ids.iter().map(|e| e.0).collect();
        let m = tape.param_rows(sampling.entity_table, &rows)?;
        let m = match sampling.backend {
            Backend::Box => m,
            Backend::Beta => BetaOperators::validity(tape, m),
        };
        sides.push(tape.mean_rows(m)?);
    }
    match sides.len() {
        0 => {
            let width = tape.store().get(sampling.entity_table).cols();
            Ok(zeros(tape, width))
        }
        1 => Ok(sides[0]),
        _ => tape.mean(&sides),
    }
}

/// `‖Var(q) - Var(q')‖₂` for two Beta embeddings.
pub fn variance_loss(
    tape: &mut Tape,
    ops: &BetaOperators,
    q: Var,
    q_integrated: Var,
) -> Result<Var> {
    let a = ops.variance(tape, q)?;
    let b = ops.variance(tape, q_integrated)?;
    let diff = tape.sub(a, b)?;
    Ok(tape.l2_norm(diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationId;
    use crate::query::QueryType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(flags: ContextFlags) -> (ParamStore, ContextNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let net =
            ContextNet::register(&mut store, &mut rng, StructureDims::uniform(3), flags, 2, 4);
        (store, net)
    }

    #[test]
    fn zero_output_map_gives_ln2_offsets_for_boxes() {
        let (mut store, net) = net(ContextFlags::ALL);
        store.get_mut(net.output).data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![0.1, 0.2, 0.3, 0.4]);
        let bundle = ContextBundle {
            position: tape.constant_vector(vec![1.0; 3]),
            role: tape.constant_vector(vec![1.0; 3]),
            query_type: tape.constant_vector(vec![1.0; 3]),
            relation_induced: tape.constant_vector(vec![1.0; 2]),
        };
        let out = net.integrate(&mut tape, Backend::Box, q, &bundle).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, ln2, ln2]);
    }

    #[test]
    fn integrate_checks_width() {
        let (store, net) = net(ContextFlags::ALL);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![0.0; 6]);
        let z3 = tape.constant_vector(vec![0.0; 3]);
        let z2 = tape.constant_vector(vec![0.0; 2]);
        let bundle = ContextBundle {
            position: z3,
            role: z3,
            query_type: z3,
            relation_induced: z2,
        };
        assert!(matches!(
            net.integrate(&mut tape, Backend::Box, q, &bundle),
            Err(Error::DimMismatch {
                expected: 4,
                got: 6
            })
        ));
    }

    #[test]
    fn type_embedding_shared_and_zero_map() {
        let (mut store, net) = net(ContextFlags::ALL);
        let g = QueryGraph::build(
            QueryType::Ip,
            &[EntityId(0), EntityId(1)],
            &[RelationId(0); 3],
        )
        .unwrap();
        {
            let mut tape = Tape::new(&store);
            let a = net.type_embedding(&mut tape, &g).unwrap();
            let b = net.type_embedding(&mut tape, &g).unwrap();
            assert_eq!(tape.value(a), tape.value(b));
        }
        store.get_mut(net.type_map).data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let a = net.type_embedding(&mut tape, &g).unwrap();
        assert!(tape.value(a).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relation_induced_one_and_two_sided() {
        let kg = KnowledgeGraph::parse("a\tr\tb\nb\ts\tc\n", false).unwrap();
        let mut store = ParamStore::new();
        // rows a, b, c
        let table = store.add(
            "entity",
            Tensor::matrix(3, 2, vec![9.0, 9.0, 1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let sampling = RelationSampling {
            entity_table: table,
            backend: Backend::Box,
            k: 120,
            seed: 0,
        };
        let (a, r, s) = (
            kg.entity("a").unwrap(),
            kg.relation("r").unwrap(),
            kg.relation("s").unwrap(),
        );
        let one = QueryGraph::build(QueryType::P1, &[a], &[r]).unwrap();
        let two = QueryGraph::build(QueryType::P2, &[a], &[r, s]).unwrap();
        let mut tape = Tape::new(&store);
        let l = relation_induced_embedding(&mut tape, &kg, &one, one.answer(), &sampling).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0, 0.0]);
        // Variable of 2p: tails of r = {b}, heads of s = {b}.
        let l = relation_induced_embedding(&mut tape, &kg, &two, 1, &sampling).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0, 0.0]);
        // Answer of 2p: tails of s = {c}.
        let l = relation_induced_embedding(&mut tape, &kg, &two, two.answer(), &sampling).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0, 1.0]);
    }
}
