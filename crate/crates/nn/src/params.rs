//! Named parameter tensors with matching gradient accumulators.

use rand::Rng;

use crate::error::NnError;
use crate::tensor::{s, Scalar, Tensor};

#[derive(Debug, Clone)]
struct Entry<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
}

/// Insertion-ordered parameter set. Order is part of the contract: the
/// optimizer state and checkpoint files follow it.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<Entry<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> ParamStore<S> {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) {
        assert!(self.index(name).is_none(), "duplicate parameter `{name}`");
        let grad = Tensor::zeros_like(&value);
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
        });
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<S>> {
        self.index(name).map(|i| &self.entries[i].value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.index(name).map(move |i| &mut self.entries[i].value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<S>> {
        self.index(name).map(|i| &self.entries[i].grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor<S>) {
        let i = self
            .index(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        let entry = &mut self.entries[i];
        assert_eq!(
            entry.grad.shape(),
            delta.shape(),
            "gradient shape for `{name}`"
        );
        for (g, &d) in entry.grad.data_mut().iter_mut().zip(delta.data()) {
            *g = *g + d;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = S::zero();
            }
        }
    }

    pub fn grads_finite(&self) -> Result<(), NnError> {
        for e in &self.entries {
            if !e.grad.is_finite() {
                return Err(NnError::NonFinite {
                    context: format!("gradient of `{}`", e.name),
                });
            }
        }
        Ok(())
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| {
                let g = g.to_f64().unwrap();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale gradients so the global norm is at most `max_norm`; returns
    /// the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = s::<S>(max_norm / norm);
            for e in &mut self.entries {
                for g in e.grad.data_mut() {
                    *g = *g * factor;
                }
            }
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>, &Tensor<S>)> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), &e.value, &e.grad))
    }

    pub(crate) fn iter_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<S>, &mut Tensor<S>)> {
        self.entries
            .iter_mut()
            .map(|e| (e.name.as_str(), &mut e.value, &mut e.grad))
    }
}

/// Declared shape and init rule of one named parameter; the unit networks
/// and the policy build their stores from lists of these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// None: zero-initialized (biases).
    pub fan_in: Option<usize>,
}

impl ParamSpec {
    pub fn init_into<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        let tensor = match self.fan_in {
            Some(fan_in) => fan_in_uniform(&self.shape, fan_in, rng),
            None => Tensor::zeros(&self.shape),
        };
        store.insert(&self.name, tensor);
    }
}

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Noise is
/// drawn in f64 so f32 and f64 stores see the same stream.
pub fn fan_in_uniform<S: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<S> = (0..len).map(|_| s(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grads_accumulate_and_zero() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::from_f64(vec![2], &[1.0, 2.0]));
        store.accumulate_grad("w", &Tensor::from_f64(vec![2], &[0.5, 0.5]));
        store.accumulate_grad("w", &Tensor::from_f64(vec![2], &[1.0, -1.0]));
        assert_eq!(store.grad("w").unwrap().data(), &[1.5, -0.5]);
        store.zero_grads();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_panic() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::zeros(&[1]));
        store.insert("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn nonfinite_grad_is_reported() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::zeros(&[1]));
        store.accumulate_grad("w", &Tensor::from_f64(vec![1], &[f64::INFINITY]));
        assert!(store.grads_finite().is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a: Tensor<f64> = fan_in_uniform(&[4, 4], 16, &mut ChaCha8Rng::seed_from_u64(3));
        let b: Tensor<f64> = fan_in_uniform(&[4, 4], 16, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|x| x.abs() < 0.25));
    }
}
