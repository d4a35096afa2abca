use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::QParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "qnet.adam.{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "qnet.adam.eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: &QParams, lr: f64, config: AdamConfig) -> Self {
        let n = params.n_params();
        Self {
            lr,
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut QParams, grads: &QParams) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_size() {
        let mut p = QParams::init(&[1, 1], 0);
        p.layers[0].weights[0] = 0.0;
        let mut g = p.zeros_like();
        g.layers[0].weights[0] = 1.0;
        let mut adam = Adam::new(&p, 1e-3, AdamConfig::default());
        adam.step(&mut p, &g);
        // -lr * 1 / (1 + 1e-8)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.layers[0].weights[0] - expected).abs() < 1e-15);
        assert!((p.layers[0].weights[0] + 9.99999e-4).abs() < 1e-9);
        assert_eq!(p.layers[0].biases[0], 0.0);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (w - 3)^2
        let mut p = QParams::init(&[1, 1], 0);
        let mut adam = Adam::new(&p, 0.05, AdamConfig::default());
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.layers[0].weights[0] = 2.0 * (p.layers[0].weights[0] - 3.0);
            adam.step(&mut p, &g);
        }
        assert!((p.layers[0].weights[0] - 3.0).abs() < 1e-3);
    }
}
