use rand::Rng;

use super::missing_cache;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity in eval.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    rate: f64,
    /// Per-element multiplier (0 or the survivor scale) from the last forward.
    mask: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mask(&self) -> Option<&Tensor<T>> {
        self.mask.as_ref()
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    pub(super) fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(input.clone())
    }

    pub(super) fn forward_train(&mut self, input: &Tensor<T>, stream: u64) -> Result<Tensor<T>> {
        let mut rng = seed::rng(stream);
        let scale = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..input.numel())
            .map(|_| {
                if rng.gen::<f64>() < self.rate {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mask = Tensor::from_vec(input.dims(), mask)?;
        let out = apply(input, &mask)?;
        self.mask = Some(mask);
        Ok(out)
    }

    pub(super) fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("dropout"))?;
        apply(grad_output, mask)
    }
}

fn apply<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if x.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "dropout mask {} does not match {}",
            mask.shape(),
            x.shape()
        )));
    }
    let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Tensor::from_vec(x.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_must_be_below_one() {
        assert!(matches!(Dropout::<f32>::new(1.0), Err(Error::Config(_))));
        assert!(Dropout::<f32>::new(-0.1).is_err());
    }

    #[test]
    fn eval_is_identity() {
        let d = Dropout::<f64>::new(0.5).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1., 2., 3.]).unwrap();
        assert_eq!(d.infer(&x).unwrap(), x);
    }

    #[test]
    fn zero_rate_train_is_identity() {
        let mut d = Dropout::<f64>::new(0.0).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1., 2., 3.]).unwrap();
        assert_eq!(d.forward_train(&x, 5).unwrap(), x);
    }

    #[test]
    fn mean_preserved_in_expectation() {
        let mut d = Dropout::<f64>::new(0.25).unwrap();
        let x = Tensor::full(&[1, 10_000], 1.0).unwrap();
        let y = d.forward_train(&x, 11).unwrap();
        let mean = y.sum() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn backward_reuses_mask() {
        let mut d = Dropout::<f64>::new(0.5).unwrap();
        let x = Tensor::full(&[4, 8], 3.0).unwrap();
        let y = d.forward_train(&x, 2).unwrap();
        let g = d.backward(&Tensor::full(&[4, 8], 1.0).unwrap()).unwrap();
        for ((&yi, &gi), &xi) in y.data().iter().zip(g.data()).zip(x.data()) {
            if yi == 0.0 {
                assert_eq!(gi, 0.0);
            } else {
                assert_eq!(yi, xi * 2.0);
                assert_eq!(gi, 2.0);
            }
        }
    }

    #[test]
    fn same_stream_same_mask() {
        let mut a = Dropout::<f32>::new(0.25).unwrap();
        let mut b = Dropout::<f32>::new(0.25).unwrap();
        let x = Tensor::full(&[2, 50], 1.0).unwrap();
        assert_eq!(a.forward_train(&x, 77).unwrap(), b.forward_train(&x, 77).unwrap());
    }
}
