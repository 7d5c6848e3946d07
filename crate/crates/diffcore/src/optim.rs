use std::collections::BTreeMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates with bias correction.
#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: BTreeMap<ParamId, f64>,
    state: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr: BTreeMap::new(),
            state: BTreeMap::new(),
        }
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.lr.insert(id, lr);
    }

    pub fn lr(&self, id: ParamId) -> f64 {
        self.lr.get(&id).copied().unwrap_or(self.cfg.lr)
    }

    /// Apply one update from `(id, gradient)` pairs, in the given order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        for (id, g) in grads {
            let lr = self.lr(*id);
            let st = self.state.entry(*id).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                steps: 0,
            });
            st.steps += 1;
            let c1 = 1.0 - beta1.powi(st.steps as i32);
            let c2 = 1.0 - beta2.powi(st.steps as i32);
            let p = store.get_mut(*id).data_mut();
            for (((pv, &gv), m), v) in p.iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = beta1 * *m + (1.0 - beta1) * gv;
                *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                *pv -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }

    /// Moment state as `(id, m, v, steps)`, for checkpointing.
    pub fn export(&self) -> Vec<(ParamId, Tensor, Tensor, u64)> {
        self.state
            .iter()
            .map(|(&id, s)| (id, Tensor::vector(s.m.clone()), Tensor::vector(s.v.clone()), s.steps))
            .collect()
    }

    pub fn import(&mut self, id: ParamId, m: Tensor, v: Tensor, steps: u64) {
        self.state.insert(
            id,
            Moments {
                m: m.into_data(),
                v: v.into_data(),
                steps,
            },
        );
    }
}
