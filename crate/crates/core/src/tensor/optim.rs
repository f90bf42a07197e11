use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = |t: &Tensor<F>| Tensor::zeros(t.shape().to_vec());
        Adam {
            config,
            step: 0,
            first: params.tensors().iter().map(zeros).collect(),
            second: params.tensors().iter().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `grads` is aligned with the store order.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(TensorError::Shape {
                op: "adam",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let corr1 = F::one() - F::of(c.beta1.powi(t));
        let corr2 = F::one() - F::of(c.beta2.powi(t));
        let (lr, eps) = (F::of(c.learning_rate), F::of(c.epsilon));
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + (F::one() - b1) * gj;
                v[j] = b2 * v[j] + (F::one() - b2) * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
