use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moments start at zero.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        validate_lr(config.lr)?;
        let zeros: Vec<Array2<f64>> = params
            .iter()
            .map(|(_, _, v)| Array2::zeros(v.raw_dim()))
            .collect();
        Ok(Adam {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        validate_lr(lr)?;
        self.config.lr = lr;
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter; parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let theta = params.get_mut(id);
            match grads.param(id) {
                Some(g) => Zip::from(theta)
                    .and(m)
                    .and(v)
                    .and(g)
                    .for_each(|p, m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }),
                None => Zip::from(theta).and(m).and(v).for_each(|p, m, v| {
                    *m *= beta1;
                    *v *= beta2;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }),
            }
        }
    }
}

fn validate_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Invalid(format!(
            "learning rate must be positive, got {lr}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use ndarray::array;

    fn grads_for(store: &ParamStore, scale: f64) -> Gradients {
        // loss = scale * sum(w) so dL/dw = scale everywhere
        let mut tape = Tape::with_params(store);
        let w = tape.param(crate::tensor::ParamId(0));
        let s = tape.sum(w).unwrap();
        let l = tape.affine(s, scale, 0.0).unwrap();
        tape.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", array![[0.5, -1.5]]);
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        let g = grads_for(&store, 0.0);
        adam.step(&mut store, &g);
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.add("w", array![[0.0, 3.0]]);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, &store).unwrap();
        let g = grads_for(&store, 2.5);
        adam.step(&mut store, &g);
        // m_hat = g, v_hat = g^2, so delta = lr * g / (|g| + eps)
        let expected = cfg.lr * 2.5 / (2.5 + cfg.eps);
        let w = store.get(crate::tensor::ParamId(0));
        assert!((w[[0, 0]] + expected).abs() < 1e-15);
        assert!((w[[0, 1]] - (3.0 - expected)).abs() < 1e-15);
        assert!((expected - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut store = ParamStore::new();
            store.add("w", array![[0.1, 0.2, -0.3]]);
            let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
            for k in 0..5 {
                let g = grads_for(&store, 1.0 + k as f64);
                adam.step(&mut store, &g);
            }
            store
        };
        let (a, b) = (run(), run());
        let bits = |s: &ParamStore| -> Vec<u64> {
            s.iter()
                .flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let store = ParamStore::new();
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg, &store).is_err());
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        assert!(adam.set_lr(-1.0).is_err());
    }
}
