//! Affine layer, ReLU, elementwise add and the softmax cross-entropy loss.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// `input [N,F] * weight[K,F]^T + bias[K]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[n, f], &[k, wf]) = (input.shape(), weight.shape()) else {
        return Err(Error::shape(format!(
            "linear expects [N,F] input and [K,F] weight, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    };
    if f != wf || bias.len() != k {
        return Err(Error::shape(format!(
            "linear: input features {f}, weight {k}x{wf}, bias {}",
            bias.len()
        )));
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    gemm(
        MatRef::new(input.data(), n, f),
        MatRef::new(weight.data(), k, f).t(),
        T::one(),
        &mut out,
    );
    Tensor::from_vec(vec![n, k], out)
}

pub struct LinearGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &[T]) -> LinearGrads<T> {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let k = weight.shape()[0];
    let dy = MatRef::new(grad_out, n, k);
    let mut dx = vec![T::zero(); n * f];
    gemm(dy, MatRef::new(weight.data(), k, f), T::zero(), &mut dx);
    let mut dw = vec![T::zero(); k * f];
    gemm(dy.t(), MatRef::new(input.data(), n, f), T::zero(), &mut dw);
    let mut db = vec![T::zero(); k];
    for row in grad_out.chunks(k) {
        db.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(input: &[T], grad_out: &[T]) -> Vec<T> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("add: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &z in row {
            let e = (z - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p = *p / total;
        }
    }
    out
}

/// Label rows `(1 - eps) * onehot + eps / K`.
pub fn smoothed_one_hot<T: Scalar>(labels: &[usize], classes: usize, smoothing: f64) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let off = T::of(smoothing / classes as f64);
    let on = T::of(1.0 - smoothing) + off;
    let mut q = vec![off; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of range [0, {classes})")));
        }
        q[i * classes + y] = on;
    }
    Ok(q)
}

pub struct CrossEntropy<T> {
    pub loss: T,
    pub probs: Vec<T>,
}

/// Mean over the batch of `-sum_k q_k log softmax(z)_k` for probability rows `q`.
pub fn soft_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[T]) -> Result<CrossEntropy<T>> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape(format!("cross entropy expects [N,K] logits, got {:?}", logits.shape())));
    };
    if targets.len() != n * k {
        return Err(Error::shape("cross entropy targets must match logits"));
    }
    let z = logits.data();
    let mut total = T::zero();
    for (row, q) in z.chunks(k).zip(targets.chunks(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (&zi, &qi) in row.iter().zip(q) {
            if qi != T::zero() {
                total += qi * (lse - zi);
            }
        }
    }
    Ok(CrossEntropy {
        loss: total / T::of(n as f64),
        probs: softmax_rows(z, k),
    })
}

/// Hard-label variant with optional label smoothing.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    smoothing: f64,
) -> Result<CrossEntropy<T>> {
    let k = *logits.shape().last().unwrap_or(&0);
    let q = smoothed_one_hot(labels, k, smoothing)?;
    soft_cross_entropy(logits, &q)
}

/// Gradient of the mean cross entropy: `(softmax - q) / N`, scaled by `upstream`.
pub fn cross_entropy_backward<T: Scalar>(probs: &[T], targets: &[T], batch: usize, upstream: T) -> Vec<T> {
    let scale = upstream / T::of(batch as f64);
    probs.iter().zip(targets).map(|(&p, &q)| (p - q) * scale).collect()
}
