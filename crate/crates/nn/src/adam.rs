use crate::{Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn first_step_moves_each_weight_by_learning_rate() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap());
        let b = store.add("b", Tensor::zeros(&[1]));
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
            let (wv, bv) = (g.param(w), g.param(b));
            let z = g.linear(x, wv, bv).unwrap();
            let loss = g.bce_with_logits(z, &Tensor::full(&[1, 1], 1.0), 1e-7).unwrap();
            g.backward(loss)
        };
        let before = store.get(w).clone();
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.01), &store);
        adam.step(&mut store, &grads);
        for (a, b) in store.get(w).data().iter().zip(before.data()) {
            assert!(((a - b) - 0.01).abs() < 1e-6, "moved {}", a - b);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[3], 0.25));
        let mut grads_store = ParamStore::new();
        grads_store.add("w", Tensor::full(&[3], 1.0));
        let grads = Gradients::from_store_for_tests(&grads_store);
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.0), &store);
        for _ in 0..5 {
            adam.step(&mut store, &grads);
        }
        assert_eq!(store.get(w).data(), &[0.25, 0.25, 0.25]);
    }
}
