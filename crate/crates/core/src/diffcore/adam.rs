use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        let AdamConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gv), (mv, vv)) in iter {
                *w -= lr * weight_decay * *w;
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut params = vec![Tensor::vector(vec![1.5, -2.0, 0.25])];
        let before = params.clone();
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(config, &params);
        for _ in 0..10 {
            state.step(&mut params, &[Tensor::zeros(&[3])]);
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        // Scalar simulation oracle: (x - 3)^2 from 0 with lr 0.1.
        let mut params = vec![Tensor::scalar(0.0)];
        let config = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(config, &params);
        for _ in 0..200 {
            let x = params[0].item();
            state.step(&mut params, &[Tensor::scalar(2.0 * (x - 3.0))]);
        }
        assert!((params[0].item() - 3.0).abs() < 0.05, "{}", params[0].item());
    }

    #[test]
    fn accumulators_match_parameter_shapes() {
        let params = vec![Tensor::zeros(&[2, 3]), Tensor::scalar(1.0)];
        let state = AdamState::new(AdamConfig::default(), &params);
        let (m, v) = state.moments();
        for (p, (a, b)) in params.iter().zip(m.iter().zip(v)) {
            assert_eq!(p.shape(), a.shape());
            assert_eq!(p.shape(), b.shape());
        }
    }
}
