//! Adam optimizer with coupled L2 regularization.

use super::{Scalar, Tensor};

/// Hyperparameters. `l2` is added to the raw gradient before the moment
/// updates (coupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0,
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    states: Vec<AdamState<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], cfg: AdamConfig) -> Self {
        let states = params
            .iter()
            .map(|p| AdamState {
                m: vec![T::zero(); p.len()],
                v: vec![T::zero(); p.len()],
            })
            .collect();
        Adam { cfg, states, step: 0 }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn states(&self) -> &[AdamState<T>] {
        &self.states
    }

    /// Restores optimizer state (checkpoint resume). Shapes must match the
    /// parameter list the optimizer was built for.
    pub fn restore(&mut self, states: Vec<AdamState<T>>, step: u64) {
        assert_eq!(states.len(), self.states.len(), "optimizer state count mismatch");
        for (new, old) in states.iter().zip(self.states.iter()) {
            assert_eq!(new.m.len(), old.m.len(), "optimizer state shape mismatch");
        }
        self.states = states;
        self.step = step;
    }

    /// One update over all parameters. Missing gradients are treated as
    /// zero (the L2 term still applies). Parameter values are updated in
    /// place; gradients are left for the caller to clear.
    pub fn step(&mut self, params: &[Tensor<T>]) {
        assert_eq!(params.len(), self.states.len());
        self.step += 1;
        let lr = T::of(self.cfg.lr);
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let eps = T::of(self.cfg.epsilon);
        let l2 = T::of(self.cfg.l2);
        let bc1 = T::one() - T::of(self.cfg.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(self.cfg.beta2.powi(self.step as i32));

        for (p, st) in params.iter().zip(self.states.iter_mut()) {
            let grad = p.grad();
            let mut vals = p.values_mut();
            for i in 0..vals.len() {
                let g0 = grad.as_ref().map_or(T::zero(), |g| g[i]);
                let g = g0 + l2 * vals[i];
                st.m[i] = b1 * st.m[i] + (T::one() - b1) * g;
                st.v[i] = b2 * st.v[i] + (T::one() - b2) * g * g;
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                vals[i] = vals[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
