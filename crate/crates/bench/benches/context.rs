use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qembed_bench::{dense_graph, model};
use qembed_core::autodiff::Tape;
use qembed_core::context::{relation_induced_embedding, RelationSampling};
use qembed_core::{Backend, EntityId, QueryGraph, QueryType, RelationId};

// Sample sizes of the K sweep; cost should grow about linearly.
fn relation_induced(c: &mut Criterion) {
    let kg = dense_graph();
    let graph = QueryGraph::build(
        QueryType::P2,
        &[EntityId(0)],
        &[RelationId(0), RelationId(2)],
    )
    .expect("2p graph");
    let mut group = c.benchmark_group("relation_induced");
    for backend in [Backend::Box, Backend::Beta] {
        let m = model(&kg, backend, 108, 120);
        for k in [60, 120, 240, 480] {
            let sampling = RelationSampling { k, ..m.sampling() };
            group.bench_with_input(BenchmarkId::new(backend.name(), k), &k, |b, _| {
                b.iter(|| {
                    let mut tape = Tape::new(m.store());
                    let v =
                        relation_induced_embedding(&mut tape, &kg, &graph, 1, &sampling).unwrap();
                    tape.value(v).data()[0]
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, relation_induced);
criterion_main!(benches);
