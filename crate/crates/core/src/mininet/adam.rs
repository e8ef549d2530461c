use crate::error::{Error, Result};

use super::params::Params;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;

    /// Zero moments shaped like `params` with the default hyperparameters.
    pub fn new(params: &Params) -> Self {
        Self::with_hyperparameters(
            params,
            Self::DEFAULT_LEARNING_RATE,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
        )
    }

    pub fn with_hyperparameters(
        params: &Params,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
    ) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn update(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        let shapes_match = |p: &Params| {
            p.tensors().len() == self.m.len()
                && p.tensors()
                    .iter()
                    .zip(&self.m)
                    .all(|(a, b)| a.len() == b.len())
        };
        if !shapes_match(params) || !shapes_match(grads) {
            return Err(Error::contract(
                "optimizer state and parameter shapes differ",
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let tensors = params.tensors_mut();
        for (k, (p, g)) in tensors.iter_mut().zip(grads.tensors()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mininet::NetConfig;

    fn tiny() -> (NetConfig, Params) {
        let c = NetConfig {
            grid_resolution: 8,
            loss_resolution: 8,
            channels: vec![1, 1],
            bottleneck: vec![],
            mlp_hidden: vec![],
            subsample: 1,
            tile: 1,
            leaky_slope: 0.2,
        };
        let p = Params::init(&c, 0).unwrap();
        (c, p)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // After one step m_hat = g and v_hat = g^2, so each value moves by
        // lr * g / (|g| + eps).
        let (_, mut p) = tiny();
        let before = p.clone();
        let mut grads = p.zeros_like();
        for t in grads.tensors_mut() {
            t.fill(2.0);
        }
        let mut adam = AdamState::with_hyperparameters(&p, 0.01, 0.9, 0.999);
        adam.update(&mut p, &grads).unwrap();
        for (a, b) in p
            .tensors()
            .iter()
            .flatten()
            .zip(before.tensors().iter().flatten())
        {
            assert!((b - a - 0.01 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_values() {
        let (_, mut p) = tiny();
        let before = p.tensors().to_vec();
        let mut grads = p.zeros_like();
        grads.tensors_mut()[0].fill(1.0);
        let mut adam = AdamState::with_hyperparameters(&p, 0.0, 0.9, 0.999);
        adam.update(&mut p, &grads).unwrap();
        assert_eq!(p.tensors(), &before[..]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn defaults() {
        let (_, p) = tiny();
        let a = AdamState::new(&p);
        assert_eq!((a.learning_rate, a.beta1, a.beta2), (1e-4, 0.9, 0.999));
    }
}
