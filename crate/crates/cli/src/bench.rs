//! Timing of the relation-induced context, shared by `bench-context` and
//! the scaling acceptance check.

use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use qembed_core::autodiff::Tape;
use qembed_core::context::{relation_induced_embedding, RelationSampling};
use qembed_core::{EntityId, KnowledgeGraph, Model, QueryGraph, QueryType, RelationId, Side};

/// A 2p graph over the two relations with the most endpoints, so its
/// variable node draws context from both sides at full sample size.
pub fn busiest_chain(kg: &KnowledgeGraph) -> Result<QueryGraph> {
    let mut by_size: Vec<(usize, RelationId)> = (0..kg.num_relations())
        .map(|r| {
            let r = RelationId(r);
            let tails = kg
                .relation_endpoints(r, Side::Tail)
                .map(|s| s.len())
                .unwrap_or(0);
            let heads = kg
                .relation_endpoints(r, Side::Head)
                .map(|s| s.len())
                .unwrap_or(0);
            (tails.min(heads), r)
        })
        .collect();
    by_size.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let (first, second) = match by_size.as_slice() {
        [a, b, ..] => (a.1, b.1),
        [a] => (a.1, a.1),
        [] => anyhow::bail!("graph has no relations"),
    };
    Ok(QueryGraph::build(
        QueryType::P2,
        &[EntityId(0)],
        &[first, second],
    )?)
}

/// Mean wall time of one relation-induced embedding of `node` with `k`
/// samples per relation side, over `calls` calls after a warm-up that
/// fills the sample cache.
pub fn mean_context_time(
    model: &Model,
    kg: &KnowledgeGraph,
    graph: &QueryGraph,
    node: usize,
    k: usize,
    calls: usize,
) -> Result<Duration> {
    let sampling = RelationSampling {
        k,
        ..model.sampling()
    };
    let once = || -> Result<f64> {
        let mut tape = Tape::new(model.store());
        let v = relation_induced_embedding(&mut tape, kg, graph, node, &sampling)?;
        Ok(tape.value(v).data()[0])
    };
    for _ in 0..calls.div_ceil(10).max(1) {
        once().context("warm-up call")?;
    }
    let start = Instant::now();
    let mut sink = 0.0;
    for _ in 0..calls {
        sink += once()?;
    }
    let elapsed = start.elapsed();
    std::hint::black_box(sink);
    Ok(elapsed / calls.max(1) as u32)
}
