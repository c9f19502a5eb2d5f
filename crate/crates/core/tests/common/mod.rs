//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the indexed code paths it is
//! compared against.

#![allow(dead_code)]

use std::collections::BTreeSet;

use qembed_core::{ComputationGraph, EntityId, KnowledgeGraph, QueryType, Triple};

/// Answers by the recursive set definition, scanning the raw triple list
/// for every projection.
pub fn naive_answers(
    triples: &[Triple],
    num_entities: usize,
    cg: &ComputationGraph,
) -> BTreeSet<EntityId> {
    match cg {
        ComputationGraph::Anchor { entity, .. } => BTreeSet::from([*entity]),
        ComputationGraph::Projection {
            relation, input, ..
        } => {
            let from = naive_answers(triples, num_entities, input);
            triples
                .iter()
                .filter(|t| t.relation == *relation && from.contains(&t.head))
                .map(|t| t.tail)
                .collect()
        }
        ComputationGraph::Intersection(children) => {
            let mut sets = children
                .iter()
                .map(|c| naive_answers(triples, num_entities, c));
            let first = sets.next().unwrap_or_default();
            sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
        }
        ComputationGraph::Union(children) => children
            .iter()
            .flat_map(|c| naive_answers(triples, num_entities, c))
            .collect(),
        ComputationGraph::Negation(inner) => {
            let s = naive_answers(triples, num_entities, inner);
            (0..num_entities)
                .map(EntityId)
                .filter(|e| !s.contains(e))
                .collect()
        }
    }
}

pub fn naive_answers_in(kg: &KnowledgeGraph, cg: &ComputationGraph) -> BTreeSet<EntityId> {
    naive_answers(kg.triples(), kg.num_entities(), cg)
}

/// Hand-written template shapes: node roles (0 anchor, 1 variable,
/// 2 answer) and directed edges, transcribed by hand from the usual drawings of
/// the fourteen query structures.
pub fn template_shape(t: QueryType) -> (Vec<usize>, Vec<(usize, usize)>) {
    use QueryType::*;
    match t {
        P1 => (vec![0, 2], vec![(0, 1)]),
        P2 => (vec![0, 1, 2], vec![(0, 1), (1, 2)]),
        P3 => (vec![0, 1, 1, 2], vec![(0, 1), (1, 2), (2, 3)]),
        I2 | U2 | In2 => (vec![0, 0, 2], vec![(0, 2), (1, 2)]),
        I3 | In3 => (vec![0, 0, 0, 2], vec![(0, 3), (1, 3), (2, 3)]),
        Ip | Up | Inp => (vec![0, 0, 1, 2], vec![(0, 2), (1, 2), (2, 3)]),
        Pi | Pin | Pni => (vec![0, 1, 0, 2], vec![(0, 1), (1, 3), (2, 3)]),
    }
}

/// Count table by enumerating every anchor-to-node path of the shape
/// and taking the longest as the node's position.
pub fn enumerated_count_table(t: QueryType) -> [[u32; 4]; 3] {
    let (roles, edges) = template_shape(t);
    fn longest(v: usize, edges: &[(usize, usize)]) -> usize {
        edges
            .iter()
            .filter(|(_, d)| *d == v)
            .map(|(s, _)| 1 + longest(*s, edges))
            .max()
            .unwrap_or(0)
    }
    let mut table = [[0u32; 4]; 3];
    for (v, &role) in roles.iter().enumerate() {
        table[role][longest(v, &edges)] += 1;
    }
    table
}

/// Tanh-sinh quadrature of `f(x, 1 - x)` over (0, 1). Receiving both `x`
/// and `1 - x` keeps precision near either endpoint.
pub fn tanh_sinh(f: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut total = 0.0;
    for k in -384i32..=384 {
        let t = k as f64 * h;
        let u = half_pi * t.sinh();
        let x = 1.0 / (1.0 + (-2.0 * u).exp());
        let y = 1.0 / (1.0 + (2.0 * u).exp());
        if x <= 0.0 || y <= 0.0 {
            continue;
        }
        let w = half_pi * t.cosh() / (2.0 * u.cosh().powi(2));
        let v = f(x, y);
        if v.is_finite() {
            total += w * v;
        }
    }
    total * h
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn beta_log_density(a: f64, b: f64, x: f64, y: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * y.ln() - ln_beta_fn(a, b)
}

/// Variance of Beta(a, b) from numerically integrated moments.
pub fn beta_variance_by_quadrature(a: f64, b: f64) -> f64 {
    let m0 = tanh_sinh(|x, y| beta_log_density(a, b, x, y).exp());
    let m1 = tanh_sinh(|x, y| x * beta_log_density(a, b, x, y).exp());
    let m2 = tanh_sinh(|x, y| x * x * beta_log_density(a, b, x, y).exp());
    m2 / m0 - (m1 / m0).powi(2)
}

/// KL(Beta(a1, b1) ‖ Beta(a2, b2)) by numerical integration.
pub fn beta_kl_by_quadrature(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    tanh_sinh(|x, y| {
        let lp = beta_log_density(a1, b1, x, y);
        let lq = beta_log_density(a2, b2, x, y);
        lp.exp() * (lp - lq)
    })
}
