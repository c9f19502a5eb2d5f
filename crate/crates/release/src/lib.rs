//! Datasets used by the release gate in `tests/acceptance.rs`.

use qembed_core::oracle::label_easy_hard;
use qembed_core::{KgBuilder, KnowledgeGraph, QueryInstance, QueryType, Result};

/// Anchor `a_i` reaches `x_i_*` and `y_i_*` through `r`; only the `y`
/// entities are also reached from the hub `b` through `s`. The 1p query
/// `(a_i, r)` is thus answered by both groups while the 2i query
/// `(a_i, r) ∧ (b, s)` is answered by the `y` group alone, so the same
/// anchor and relation pair needs different answers in the two shapes.
/// One `a_i -r-> y_i_3` edge per anchor is held out for validation.
pub fn structured_dataset(
    anchors: usize,
) -> Result<(KnowledgeGraph, Vec<QueryInstance>, Vec<QueryInstance>)> {
    let mut train = String::new();
    let mut held = String::new();
    for i in 0..anchors {
        for j in 0..4 {
            train.push_str(&format!("a{i}\tr\tx{i}_{j}\n"));
            train.push_str(&format!("d\tu\tx{i}_{j}\n"));
        }
        for j in 0..4 {
            let line = format!("a{i}\tr\ty{i}_{j}\n");
            if j == 3 {
                held.push_str(&line);
            } else {
                train.push_str(&line);
            }
            train.push_str(&format!("c{i}\tt\ty{i}_{j}\n"));
            train.push_str(&format!("b\ts\ty{i}_{j}\n"));
        }
    }
    let mut builder = KgBuilder::new(true);
    let raw_train = builder.read_str(&train)?;
    let raw_held = builder.read_str(&held)?;
    let kg_train = builder.build(&raw_train)?;
    let all: Vec<_> = raw_train.iter().chain(&raw_held).copied().collect();
    let kg_full = builder.build(&all)?;
    let e = |s: &str| kg_train.entity(s);
    let r = |s: &str| kg_train.relation(s);
    let (mut training, mut validation) = (Vec::new(), Vec::new());
    for i in 0..anchors {
        let a = e(&format!("a{i}"))?;
        let p1 = QueryInstance::new(QueryType::P1, vec![a], vec![r("r")?]);
        let i2 = QueryInstance::new(QueryType::I2, vec![a, e("b")?], vec![r("r")?, r("s")?]);
        let side = QueryInstance::new(QueryType::P1, vec![e(&format!("c{i}"))?], vec![r("t")?]);
        for q in [&p1, &i2, &side] {
            training.push(label_easy_hard(&kg_train, &kg_train, q)?);
        }
        for q in [&p1, &i2] {
            validation.push(label_easy_hard(&kg_train, &kg_full, q)?);
        }
    }
    for (a, rel) in [("b", "s"), ("d", "u")] {
        let q = QueryInstance::new(QueryType::P1, vec![e(a)?], vec![r(rel)?]);
        training.push(label_easy_hard(&kg_train, &kg_train, &q)?);
    }
    Ok((kg_train, training, validation))
}
