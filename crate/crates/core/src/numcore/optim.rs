use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with bias correction and per-parameter moment state.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    state: BTreeMap<String, Moments>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Number of completed `step` calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every trainable entry from its gradient, then clears all
    /// gradients. Entries outside the trainable mask are never written.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let names: Vec<String> = store.trainable().iter().cloned().collect();
        for name in &names {
            if store.get(name).and_then(|t| t.grad()).is_none() {
                return Err(Error::contract(format!("trainable parameter `{name}` has no gradient")));
            }
        }
        for name in names {
            let tensor = store.get_mut(&name).expect("checked above");
            let grad = tensor.grad().expect("checked above").to_vec();
            let st = self.state.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            if lr == 0.0 {
                continue;
            }
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        self.steps += 1;
        Ok(())
    }
}
