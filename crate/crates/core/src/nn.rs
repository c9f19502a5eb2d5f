//! Parameter initialisation and the two-layer perceptron used by the
//! operator and integration networks.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Matrix with entries drawn uniformly from `[-limit, limit]`.
pub fn uniform_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    limit: f64,
) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

/// Glorot-uniform weight matrix of shape `[out, inp]`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize) -> Tensor {
    let limit = (6.0 / (out + inp) as f64).sqrt();
    uniform_matrix(rng, out, inp, limit)
}

/// `x -> W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Self {
        Mlp {
            w1: store.add(format!("{name}.w1"), glorot(rng, hidden, input)),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add(format!("{name}.w2"), glorot(rng, output, hidden)),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(&[output])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (w1, b1) = (tape.param(self.w1), tape.param(self.b1));
        let h = tape.linear(w1, x, Some(b1))?;
        let h = tape.relu(h);
        let (w2, b2) = (tape.param(self.w2), tape.param(self.b2));
        tape.linear(w2, h, Some(b2))
    }
}

/// Plain evaluation of [`Mlp::forward`] without recording.
pub fn mlp_plain(store: &ParamStore, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = affine(store.get(mlp.w1), store.get(mlp.b1), x)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    affine(store.get(mlp.w2), store.get(mlp.b2), &hidden)
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.data()[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plain_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, &mut rng, "m", 3, 5, 2);
        for b in [mlp.b1, mlp.b2] {
            for x in store.get_mut(b).data_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        let x = vec![0.4, -1.1, 2.0];
        let mut tape = Tape::new(&store);
        let xv = tape.constant_vector(x.clone());
        let y = mlp.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).data(), mlp_plain(&store, &mlp, &x).as_slice());
    }
}
