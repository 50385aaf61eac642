//! Adam with bias correction.

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Tensor::zeros(store.get(id).shape()))
                .collect()
        };
        AdamState {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState::new(store),
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        adam_step(store, grads, &mut self.state, &self.config, lr)
    }
}

pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(Error::dim("adam", &[store.len()], &[grads.len()]));
    }
    for id in store.ids() {
        if store.get(id).shape() != grads.get(id).shape() {
            return Err(Error::dim(
                "adam",
                store.get(id).shape(),
                grads.get(id).shape(),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in store.ids() {
        let i = id.index();
        let g = grads.get(id).data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let p = store.get_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(value)).unwrap();
        s
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = single(1.25);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let g = Gradients::zeros_like(&s);
        adam.step(&mut s, &g, 1e-3).unwrap();
        assert_eq!(s.by_name("w").unwrap().item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -7.0, 1e-3] {
            let mut s = single(0.0);
            let mut adam = Adam::new(&s, AdamConfig::default());
            let grads = Gradients::from_tensors(vec![Tensor::scalar(g)]);
            adam.step(&mut s, &grads, 4e-4).unwrap();
            // m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
            let expected = -4e-4 * g / (g.abs() + 1e-8);
            let got = s.by_name("w").unwrap().item();
            assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
            assert!((got.abs() - 4e-4).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_params_move_identically() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![0.5, -0.5])).unwrap();
        s.insert("b", Tensor::vector(vec![0.5, -0.5])).unwrap();
        let mut adam = Adam::new(&s, AdamConfig::default());
        let g = Tensor::vector(vec![0.2, -1.3]);
        let grads = Gradients::from_tensors(vec![g.clone(), g]);
        for _ in 0..5 {
            adam.step(&mut s, &grads, 1e-2).unwrap();
        }
        assert_eq!(s.by_name("a"), s.by_name("b"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = single(0.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let grads = Gradients::from_tensors(vec![Tensor::zeros(&[2])]);
        assert!(adam.step(&mut s, &grads, 1e-3).is_err());
    }
}
