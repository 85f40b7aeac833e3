//! Dense row-major tensors over a generic float scalar.
//!
//! f64 is the default everywhere for test determinism; f32 is available as
//! a speed switch. Rank-0 tensors ([] shape, one element) are scalars.

use num_traits::Float;

/// Element type of the kernel. Everything the ops need comes from
/// `num_traits::Float`.
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;
    /// Max relative error accepted against central finite differences.
    const GRAD_TOL: f64;
    /// Base step for central differences, ~cbrt(machine epsilon).
    const FD_EPS: f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const GRAD_TOL: f64 = 1e-4;
    const FD_EPS: f64 = 5e-3;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const GRAD_TOL: f64 = 1e-6;
    const FD_EPS: f64 = 6e-6;
}

/// Convert an f64 constant into the kernel scalar.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from(x).expect("f64 constant representable in scalar type")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Tensor<S> {
        let len: usize = shape.iter().product();
        assert_eq!(
            len,
            data.len(),
            "shape {shape:?} needs {len} elements, got {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor<S> {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn zeros_like(other: &Tensor<S>) -> Tensor<S> {
        Self::zeros(&other.shape)
    }

    pub fn scalar(value: S) -> Tensor<S> {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Tensor<S> {
        Tensor::new(shape, data.iter().map(|&x| s(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn item(&self) -> S {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64().unwrap()).collect()
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(
            self.rank(),
            2,
            "expected rank 2, got shape {:?}",
            self.shape
        );
        (self.shape[0], self.shape[1])
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(
            self.rank(),
            3,
            "expected rank 3, got shape {:?}",
            self.shape
        );
        (self.shape[0], self.shape[1], self.shape[2])
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> S {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Tensor<S> {
        let len: usize = shape.iter().product();
        assert_eq!(
            len,
            self.data.len(),
            "reshape {:?} -> {shape:?}",
            self.shape
        );
        self.shape = shape;
        self
    }
}

/// Numerically stable softmax of a logit slice, in f64.
pub fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// log softmax(logits)[index], stable.
pub fn log_prob_f64(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - max - log_sum
}

/// Entropy of softmax(logits) in nats, stable.
pub fn entropy_f64(logits: &[f64]) -> f64 {
    let p = softmax_f64(logits);
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_item() {
        let t: Tensor<f64> = Tensor::new(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.dims2(), (2, 3));
        assert_eq!(Tensor::scalar(4.0f64).item(), 4.0);
        assert_eq!(Tensor::<f64>::zeros(&[]).len(), 1);
    }

    #[test]
    #[should_panic(expected = "shape")]
    fn mismatched_shape_panics() {
        let _ = Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax_f64(&[1.0, 2.0, 3.0, -1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).take(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn log_prob_matches_softmax() {
        let logits = [0.3, -2.0, 1.7];
        let p = softmax_f64(&logits);
        for i in 0..3 {
            assert!((log_prob_f64(&logits, i) - p[i].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_entropy_is_ln_k() {
        let h = entropy_f64(&[0.5; 7]);
        assert!((h - (7.0f64).ln()).abs() < 1e-12);
    }
}
