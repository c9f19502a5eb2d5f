use crate::autodiff::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adaptive-moment optimiser with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                lhs: vec![store.len()],
                rhs: vec![grads.len()],
            });
        }
        for ((id, _, value), g) in store.iter().zip(grads.tensors()) {
            if value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            debug_assert_eq!(self.first[id.0].shape(), g.shape());
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let x = store.get_mut(id).data_mut();
            for i in 0..x.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                x[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
