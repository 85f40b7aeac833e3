//! Adam with bias correction.

use crate::error::NnError;
use crate::params::ParamStore;
use crate::tensor::{s, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    /// (first moment, second moment) per parameter, in store order.
    moments: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, store: &ParamStore<S>) -> AdamState<S> {
        let moments = store
            .iter()
            .map(|(_, v, _)| (Tensor::zeros_like(v), Tensor::zeros_like(v)))
            .collect();
        AdamState {
            config,
            step: 0,
            moments,
        }
    }
}

/// One optimizer step over every parameter; gradients are zeroed afterwards.
/// A non-finite gradient aborts before touching any parameter or moment.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    state: &mut AdamState<S>,
) -> Result<(), NnError> {
    store.grads_finite()?;
    assert_eq!(
        store.len(),
        state.moments.len(),
        "optimizer state out of sync with store"
    );

    state.step += 1;
    let t = state.step as i32;
    let cfg = state.config;
    let (b1, b2) = (s::<S>(cfg.beta1), s::<S>(cfg.beta2));
    let one = S::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let lr = s::<S>(cfg.lr);
    let eps = s::<S>(cfg.eps);

    for ((_, value, grad), (m, v)) in store.iter_mut().zip(&mut state.moments) {
        for i in 0..value.len() {
            let g = grad.data()[i];
            let mi = b1 * m.data()[i] + (one - b1) * g;
            let vi = b2 * v.data()[i] + (one - b2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / corr1;
            let v_hat = vi / corr2;
            value.data_mut()[i] = value.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        for g in grad.data_mut() {
            *g = S::zero();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_f64(vec![values.len()], values));
        store
    }

    #[test]
    fn zero_gradient_leaves_params_but_advances_step() {
        let mut store = store_with(&[1.0, -2.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam_step(&mut store, &mut adam).unwrap();
        assert_eq!(store.value("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        let mut store = store_with(&[0.0]);
        let cfg = AdamConfig::with_lr(1e-2);
        let mut adam = AdamState::new(cfg, &store);
        let mut prev = 0.0;
        let mut delta = 0.0;
        for _ in 0..500 {
            store.accumulate_grad("w", &Tensor::from_f64(vec![1], &[3.0]));
            adam_step(&mut store, &mut adam).unwrap();
            let cur = store.value("w").unwrap().item();
            delta = prev - cur;
            prev = cur;
        }
        // With a constant positive gradient the step settles at lr * sign(g).
        assert!((delta - 1e-2).abs() < 1e-4, "final step size {delta}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = |w|^2, grad = 2w.
        let mut store = store_with(&[0.7, -1.3, 0.2, 0.9]);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-2), &store);
        for _ in 0..2000 {
            let grad: Vec<f64> = store
                .value("w")
                .unwrap()
                .data()
                .iter()
                .map(|&w| 2.0 * w)
                .collect();
            store.accumulate_grad("w", &Tensor::from_f64(vec![4], &grad));
            adam_step(&mut store, &mut adam).unwrap();
        }
        let norm: f64 = store
            .value("w")
            .unwrap()
            .data()
            .iter()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-3, "final norm {norm}");
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut store = store_with(&[1.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.accumulate_grad("w", &Tensor::from_f64(vec![1], &[f64::NAN]));
        assert!(adam_step(&mut store, &mut adam).is_err());
        assert_eq!(store.value("w").unwrap().item(), 1.0);
        assert_eq!(adam.step, 0);
    }
}
