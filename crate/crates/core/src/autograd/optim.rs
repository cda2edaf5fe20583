//! Parameters and SGD with momentum.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub momentum_buffer: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let momentum_buffer = vec![T::zero(); value.len()];
        Parameter {
            name: name.into(),
            value: value.with_requires_grad(true),
            momentum_buffer,
        }
    }
}

/// `v <- momentum * v + grad + weight_decay * w; w <- w - lr * v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// Applies one update to every parameter and clears the gradients.
    /// Fails before touching anything if any gradient is missing.
    pub fn step<T: Scalar>(&self, params: &mut [Parameter<T>]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.value.grad().is_none()) {
            return Err(Error::invalid(format!("parameter `{}` has no gradient", p.name)));
        }
        let (lr, mom, wd) = (T::of(self.lr), T::of(self.momentum), T::of(self.weight_decay));
        for p in params.iter_mut() {
            let grad = p.value.take_grad().expect("checked above");
            let Parameter { value, momentum_buffer, .. } = p;
            for ((w, v), g) in value.data_mut().iter_mut().zip(momentum_buffer.iter_mut()).zip(grad) {
                *v = mom * *v + g + wd * *w;
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64) -> Parameter<f64> {
        Parameter::new("w", Tensor::scalar(w))
    }

    #[test]
    fn two_momentum_steps_by_hand() {
        let mut p = [scalar_param(1.0)];
        let opt = Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        for _ in 0..2 {
            p[0].value.accumulate_grad(&[1.0]);
            opt.step(&mut p).unwrap();
        }
        // 1 - 0.1 * 1 - 0.1 * 1.9
        assert!((p[0].value.data()[0] - 0.71).abs() < 1e-12);
        assert!(p[0].value.grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [scalar_param(0.3)];
        p[0].value.accumulate_grad(&[0.0]);
        Sgd { lr: 0.5, momentum: 0.9, weight_decay: 0.0 }.step(&mut p).unwrap();
        assert_eq!(p[0].value.data()[0], 0.3);
    }

    #[test]
    fn no_momentum_is_plain_sgd() {
        let mut p = [scalar_param(2.0)];
        p[0].value.accumulate_grad(&[0.5]);
        Sgd { lr: 0.2, momentum: 0.0, weight_decay: 0.0 }.step(&mut p).unwrap();
        assert!((p[0].value.data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = [scalar_param(1.0), scalar_param(2.0)];
        p[0].value.accumulate_grad(&[1.0]);
        let opt = Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        assert!(opt.step(&mut p).is_err());
        assert_eq!(p[0].value.data()[0], 1.0);
    }
}
