use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{ParamId, ParamStore, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Compares tape gradients of `f` against central differences with step `h`
/// over every coordinate of every parameter in `store`.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_params(store, &ids, f, h)
}

/// Like [`grad_check`] but restricted to `params`.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    f: F,
    h: f64,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    assert!(h > 0.0, "step must be positive");
    let analytic = {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        tape.backward(root)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        Ok(tape.scalar_value(root))
    };
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for &id in params {
        for k in 0..store.get(id).len() {
            let x0 = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = x0 + h;
            let plus = eval(store);
            store.get_mut(id).data_mut()[k] = x0 - h;
            let minus = eval(store);
            store.get_mut(id).data_mut()[k] = x0;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic.get(id).data()[k];
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        coordinates,
    })
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// Domain and shape of each input.
type Inputs = Vec<(Domain, &'static [usize])>;

/// Input domain of a primitive under test.
#[derive(Clone, Copy)]
enum Domain {
    Any,
    /// Magnitude at least 0.05, away from kinks at zero.
    NonZero,
    Positive,
    /// Clear of the clamp bounds at +-1.
    OffBounds,
}

impl Domain {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Domain::Any => rng.gen_range(-2.0..2.0),
            Domain::NonZero => {
                let m = rng.gen_range(0.05..2.0);
                if rng.gen::<bool>() {
                    m
                } else {
                    -m
                }
            }
            Domain::Positive => rng.gen_range(0.1..10.0),
            Domain::OffBounds => loop {
                let x: f64 = rng.gen_range(-2.0..2.0);
                if (x.abs() - 1.0).abs() > 0.01 {
                    break x;
                }
            },
        }
    }
}

/// Reduces an output to a scalar with fixed uneven weights.
fn weighted_total(tape: &mut Tape, out: Var) -> Result<Var> {
    if tape.value(out).is_scalar() {
        return Ok(out);
    }
    let n = tape.value(out).len();
    let w = tape.constant_vector((0..n).map(|i| 1.5 + (1.3 * i as f64 + 0.7).sin()).collect());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Central-difference check of every differentiable primitive at
/// `points` random inputs each; returns the worst error per primitive.
pub fn primitive_suite(points: usize, seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    use Domain::*;
    let cases: Vec<(&'static str, Inputs, Build)> = vec![
        ("add", vec![(Any, &[4]), (Any, &[4])], |t, v| {
            t.add(v[0], v[1])
        }),
        ("sub", vec![(Any, &[4]), (Any, &[4])], |t, v| {
            t.sub(v[0], v[1])
        }),
        ("mul", vec![(Any, &[4]), (Any, &[4])], |t, v| {
            t.mul(v[0], v[1])
        }),
        ("div", vec![(Any, &[4]), (NonZero, &[4])], |t, v| {
            t.div(v[0], v[1])
        }),
        ("scale", vec![(Any, &[4])], |t, v| Ok(t.scale(v[0], -1.7))),
        ("shift", vec![(Any, &[4])], |t, v| Ok(t.shift(v[0], 0.3))),
        ("relu", vec![(NonZero, &[4])], |t, v| Ok(t.relu(v[0]))),
        ("sigmoid", vec![(Any, &[4])], |t, v| Ok(t.sigmoid(v[0]))),
        ("softplus", vec![(Any, &[4])], |t, v| Ok(t.softplus(v[0]))),
        ("exp", vec![(Any, &[4])], |t, v| Ok(t.exp(v[0]))),
        ("log", vec![(Positive, &[4])], |t, v| t.log(v[0])),
        ("abs", vec![(NonZero, &[4])], |t, v| Ok(t.abs(v[0]))),
        ("clamp", vec![(OffBounds, &[4])], |t, v| {
            Ok(t.clamp(v[0], -1.0, 1.0))
        }),
        ("lgamma", vec![(Positive, &[4])], |t, v| t.lgamma(v[0])),
        ("digamma", vec![(Positive, &[4])], |t, v| t.digamma(v[0])),
        ("sum", vec![(Any, &[4])], |t, v| Ok(t.sum(v[0]))),
        ("softmax", vec![(Any, &[4])], |t, v| Ok(t.softmax(v[0]))),
        ("l1_norm", vec![(NonZero, &[4])], |t, v| Ok(t.l1_norm(v[0]))),
        ("l2_norm", vec![(Any, &[4])], |t, v| Ok(t.l2_norm(v[0]))),
        (
            "mean",
            vec![(Any, &[3]), (Any, &[3]), (Any, &[3])],
            |t, v| t.mean(v),
        ),
        (
            "min_of",
            vec![(Any, &[3]), (Any, &[3]), (Any, &[3])],
            |t, v| t.min_of(v),
        ),
        ("concat", vec![(Any, &[2]), (Any, &[3])], |t, v| t.concat(v)),
        ("slice", vec![(Any, &[5])], |t, v| t.slice(v[0], 1, 3)),
        ("broadcast", vec![(Any, &[]), (Any, &[3])], |t, v| {
            let b = t.broadcast(v[0], 3)?;
            t.mul(b, v[1])
        }),
        ("matvec", vec![(Any, &[3, 4]), (Any, &[4])], |t, v| {
            t.matvec(v[0], v[1])
        }),
        (
            "linear",
            vec![(Any, &[3, 4]), (Any, &[4]), (Any, &[3])],
            |t, v| t.linear(v[0], v[1], Some(v[2])),
        ),
        ("matmul", vec![(Any, &[2, 3]), (Any, &[3, 2])], |t, v| {
            let m = t.matmul(v[0], v[1])?;
            t.mean_rows(m)
        }),
        ("mean_rows", vec![(Any, &[3, 4])], |t, v| t.mean_rows(v[0])),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases.len());
    for (name, inputs, build) in cases {
        let mut worst = GradCheck {
            max_rel_error: 0.0,
            coordinates: 0,
        };
        for _ in 0..points {
            let mut store = ParamStore::new();
            let ids: Vec<ParamId> = inputs
                .iter()
                .enumerate()
                .map(|(i, &(domain, shape))| {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| domain.draw(&mut rng)).collect();
                    Ok(store.add(format!("x{i}"), Tensor::new(shape.to_vec(), data)?))
                })
                .collect::<Result<_>>()?;
            let r = grad_check(
                &mut store,
                |tape| {
                    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
                    let y = build(tape, &vars)?;
                    weighted_total(tape, y)
                },
                1e-6,
            )?;
            worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
            worst.coordinates += r.coordinates;
        }
        out.push((name, worst));
    }
    Ok(out)
}
