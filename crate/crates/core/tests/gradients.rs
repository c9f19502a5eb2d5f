//! Finite-difference checks for every tape primitive and for the full
//! training loss of both backends.

use qembed_core::autodiff::{grad_check, ParamStore, Tape, Tensor, Var};
use qembed_core::dataset::generate_queries;
use qembed_core::train::{sample_loss, TrainingSample};
use qembed_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 20;
const H: f64 = 1e-6;
const PRIMITIVE_TOL: f64 = 1e-4;

/// Draws a value with magnitude in `[lo, hi]` and a random sign.
fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = rng.gen_range(lo..hi);
    if rng.gen::<bool>() {
        m
    } else {
        -m
    }
}

fn vector(rng: &mut ChaCha8Rng, n: usize, f: impl Fn(&mut ChaCha8Rng) -> f64) -> Tensor {
    Tensor::vector((0..n).map(|_| f(rng)).collect())
}

/// Reduces any output to a scalar through fixed, uneven weights so that
/// every coordinate of the output is exercised.
fn weigh(tape: &mut Tape, out: Var) -> Result<Var> {
    if tape.value(out).is_scalar() {
        return Ok(out);
    }
    let weights = |n: usize| {
        (0..n)
            .map(|i| 1.5 + (1.3 * i as f64 + 0.7).sin())
            .collect::<Vec<_>>()
    };
    let flat = if tape.value(out).shape().len() == 2 {
        let cols = tape.value(out).cols();
        let w = tape.constant_vector(weights(cols).into_iter().rev().collect());
        tape.matvec(out, w)?
    } else {
        out
    };
    let n = tape.value(flat).len();
    let w = tape.constant_vector(weights(n));
    let prod = tape.mul(flat, w)?;
    Ok(tape.sum(prod))
}

/// Runs `build` at `POINTS` random inputs drawn by `inputs`.
fn check(
    name: &str,
    seed: u64,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for point in 0..POINTS {
        let mut store = ParamStore::new();
        let ids: Vec<_> = inputs(&mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("x{i}"), t))
            .collect();
        let report = grad_check(
            &mut store,
            |tape| {
                let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
                let out = build(tape, &vars)?;
                weigh(tape, out)
            },
            H,
        )
        .unwrap();
        assert!(
            report.max_rel_error < PRIMITIVE_TOL,
            "{name} point {point}: relative error {}",
            report.max_rel_error
        );
    }
}

fn plain(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-2.0..2.0)
}

fn away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    signed(rng, 0.05, 2.0)
}

#[test]
fn binary_elementwise() {
    let two = |rng: &mut ChaCha8Rng| vec![vector(rng, 5, plain), vector(rng, 5, plain)];
    check("add", 1, two, |t, v| t.add(v[0], v[1]));
    check("sub", 2, two, |t, v| t.sub(v[0], v[1]));
    check("mul", 3, two, |t, v| t.mul(v[0], v[1]));
    check(
        "div",
        4,
        |rng| {
            vec![
                vector(rng, 5, plain),
                vector(rng, 5, |r| signed(r, 0.5, 2.0)),
            ]
        },
        |t, v| t.div(v[0], v[1]),
    );
}

#[test]
fn unary_elementwise() {
    let one = |rng: &mut ChaCha8Rng| vec![vector(rng, 6, plain)];
    check("scale", 10, one, |t, v| Ok(t.scale(v[0], -1.7)));
    check("shift", 11, one, |t, v| Ok(t.shift(v[0], 0.3)));
    check("sigmoid", 12, one, |t, v| Ok(t.sigmoid(v[0])));
    check("softplus", 13, one, |t, v| Ok(t.softplus(v[0])));
    check("exp", 14, one, |t, v| Ok(t.exp(v[0])));
    check(
        "relu",
        15,
        |rng| vec![vector(rng, 6, away_from_zero)],
        |t, v| Ok(t.relu(v[0])),
    );
    check(
        "abs",
        16,
        |rng| vec![vector(rng, 6, away_from_zero)],
        |t, v| Ok(t.abs(v[0])),
    );
    check(
        "log",
        17,
        |rng| vec![vector(rng, 6, |r| r.gen_range(0.2..3.0))],
        |t, v| t.log(v[0]),
    );
    check(
        "clamp",
        18,
        |rng| {
            // Keep clear of the bounds at +-1.
            vec![vector(rng, 6, |r| {
                let x: f64 = r.gen_range(-2.0..2.0);
                if (x.abs() - 1.0).abs() < 0.01 {
                    x * 0.5
                } else {
                    x
                }
            })]
        },
        |t, v| Ok(t.clamp(v[0], -1.0, 1.0)),
    );
    check(
        "lgamma",
        19,
        |rng| vec![vector(rng, 6, |r| r.gen_range(0.1..10.0))],
        |t, v| t.lgamma(v[0]),
    );
    check(
        "digamma",
        20,
        |rng| vec![vector(rng, 6, |r| r.gen_range(0.1..10.0))],
        |t, v| t.digamma(v[0]),
    );
}

#[test]
fn reductions() {
    let one = |rng: &mut ChaCha8Rng| vec![vector(rng, 5, plain)];
    check("sum", 30, one, |t, v| Ok(t.sum(v[0])));
    check("softmax", 31, one, |t, v| Ok(t.softmax(v[0])));
    check(
        "l1_norm",
        32,
        |rng| vec![vector(rng, 5, away_from_zero)],
        |t, v| Ok(t.l1_norm(v[0])),
    );
    check("l2_norm", 33, one, |t, v| Ok(t.l2_norm(v[0])));
    let three = |rng: &mut ChaCha8Rng| (0..3).map(|_| vector(rng, 4, plain)).collect::<Vec<_>>();
    check("mean", 34, three, |t, v| t.mean(v));
    check("min_of", 35, three, |t, v| t.min_of(v));
    check(
        "mean_rows",
        36,
        |rng| vec![Tensor::matrix(3, 4, (0..12).map(|_| plain(rng)).collect()).unwrap()],
        |t, v| t.mean_rows(v[0]),
    );
}

#[test]
fn structural() {
    let mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::matrix(r, c, (0..r * c).map(|_| plain(rng)).collect()).unwrap()
    };
    check(
        "matvec",
        40,
        |rng| vec![mat(rng, 3, 4), vector(rng, 4, plain)],
        |t, v| t.matvec(v[0], v[1]),
    );
    check(
        "linear",
        41,
        |rng| vec![mat(rng, 3, 4), vector(rng, 4, plain), vector(rng, 3, plain)],
        |t, v| t.linear(v[0], v[1], Some(v[2])),
    );
    check(
        "matmul",
        42,
        |rng| vec![mat(rng, 2, 3), mat(rng, 3, 2)],
        |t, v| {
            let m = t.matmul(v[0], v[1])?;
            t.mean_rows(m)
        },
    );
    check(
        "concat",
        43,
        |rng| vec![vector(rng, 2, plain), vector(rng, 3, plain)],
        |t, v| t.concat(v),
    );
    check(
        "slice",
        44,
        |rng| vec![vector(rng, 6, plain)],
        |t, v| t.slice(v[0], 1, 3),
    );
    check(
        "broadcast",
        45,
        |rng| vec![Tensor::scalar(plain(rng)), vector(rng, 4, plain)],
        |t, v| {
            let b = t.broadcast(v[0], 4)?;
            t.mul(b, v[1])
        },
    );
}

#[test]
fn row_gathers() {
    let table = |rng: &mut ChaCha8Rng| {
        vec![Tensor::matrix(5, 3, (0..15).map(|_| plain(rng)).collect()).unwrap()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for point in 0..POINTS {
        let mut store = ParamStore::new();
        let id = store.add("table", table(&mut rng).pop().unwrap());
        let row = rng.gen_range(0..5);
        let rows = [row, (row + 2) % 5, 4];
        let report = grad_check(
            &mut store,
            |tape| {
                let a = tape.param_row(id, row)?;
                let m = tape.param_rows(id, &rows)?;
                let b = tape.mean_rows(m)?;
                let ab = tape.mul(a, b)?;
                weigh(tape, ab)
            },
            H,
        )
        .unwrap();
        assert!(
            report.max_rel_error < PRIMITIVE_TOL,
            "row gathers point {point}: {}",
            report.max_rel_error
        );
    }
}

/// Full loss of one sample per supported query type, with every context
/// component enabled, against central differences over all parameters.
fn full_loss_check(backend: Backend, tol: f64) {
    let kg = synthetic::random_kg(24, 3, 90, 5).unwrap();
    let types: Vec<QueryType> = QueryType::ALL
        .into_iter()
        .filter(|t| backend.supports_negation() || !t.has_negation())
        .collect();
    let data = generate_queries(&kg, &kg, &types, 1, 3, GroundingOptions::default()).unwrap();
    let mut config = ModelConfig::new(backend, 3);
    config.structure = StructureDims::uniform(2);
    config.context_samples = 4;
    config.init_range = 0.8;
    config.init_seed = 11;
    let model = Model::new(config, kg.num_entities(), kg.num_relations()).unwrap();
    let mut worst: f64 = 0.0;
    for inst in &data {
        let answers = inst.all_answers();
        let positive = *answers.iter().next().unwrap();
        let negatives: Vec<EntityId> = (0..kg.num_entities())
            .map(EntityId)
            .filter(|e| !answers.contains(e))
            .take(3)
            .collect();
        let sample = TrainingSample {
            instance: inst,
            positive,
            negatives,
        };
        let mut store = model.store().clone();
        let report = grad_check(
            &mut store,
            |tape| Ok(sample_loss(&model, tape, &kg, &sample, 2.0, 0.1)?.total),
            H,
        )
        .unwrap();
        assert!(
            report.max_rel_error < tol,
            "{backend} {}: relative error {}",
            inst.query_type,
            report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
    }
    eprintln!(
        "{backend}: worst relative error {worst:.3e} over {} types",
        data.len()
    );
}

#[test]
fn full_loss_box() {
    full_loss_check(Backend::Box, 1e-3);
}

#[test]
fn full_loss_beta() {
    full_loss_check(Backend::Beta, 1e-3);
}
