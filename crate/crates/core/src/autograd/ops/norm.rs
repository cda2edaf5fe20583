//! Per-channel batch normalization over `[N, C, H, W]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics. The variance is stored unbiased.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }
}

/// Output plus what the backward pass needs.
pub struct BnForward<T> {
    pub output: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "batch_norm2d: {c} channels but gamma/beta have {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    Ok((n, c, h * w))
}

fn normalize<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: Vec<T>,
) -> Result<BnForward<T>> {
    let (n, c, plane) = check(input, gamma, beta)?;
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let (m, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + plane {
                let xh = (x[i] - m) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok(BnForward {
        output: Tensor::from_vec(input.shape().to_vec(), out)?,
        xhat,
        inv_std,
    })
}

/// Training-mode normalization with batch statistics (biased variance);
/// updates `state` by an exponential moving average.
pub fn batch_norm2d_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BnState<T>,
    eps: f64,
    momentum: f64,
) -> Result<BnForward<T>> {
    let (n, c, plane) = check(input, gamma, beta)?;
    let count = n * plane;
    if count < 2 {
        return Err(Error::invalid(
            "batch_norm2d in train mode needs N*H*W >= 2 (variance undefined)",
        ));
    }
    let x = input.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let m = T::of(count as f64);
    for ch in 0..c {
        let mut acc = T::zero();
        for s in 0..n {
            acc += x[(s * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
        mean[ch] = acc / m;
        // Second pass corrects the rounding left by the plain sum.
        let mut fix = T::zero();
        for s in 0..n {
            fix += x[(s * c + ch) * plane..][..plane].iter().map(|&v| v - mean[ch]).sum::<T>();
        }
        mean[ch] += fix / m;
        let mut sq = T::zero();
        for s in 0..n {
            for &v in &x[(s * c + ch) * plane..][..plane] {
                let d = v - mean[ch];
                sq += d * d;
            }
        }
        var[ch] = sq / m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
    let mom = T::of(momentum);
    let unbias = m / (m - T::one());
    for ch in 0..c {
        state.running_mean[ch] = (T::one() - mom) * state.running_mean[ch] + mom * mean[ch];
        state.running_var[ch] = (T::one() - mom) * state.running_var[ch] + mom * var[ch] * unbias;
    }
    normalize(input, gamma, beta, &mean, inv_std)
}

/// Evaluation-mode normalization with running statistics.
pub fn batch_norm2d_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BnState<T>,
    eps: f64,
) -> Result<BnForward<T>> {
    let inv_std = state
        .running_var
        .iter()
        .map(|&v| T::one() / (v + T::of(eps)).sqrt())
        .collect();
    normalize(input, gamma, beta, &state.running_mean, inv_std)
}

pub struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm2d_backward<T: Scalar>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    grad_out: &[T],
    mode: BnMode,
) -> BnGrads<T> {
    let (n, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let m = T::of((n * plane) as f64);
    let mut dx = vec![T::zero(); grad_out.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                sum_dy += grad_out[i];
                sum_dy_xhat += grad_out[i] * xhat[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * inv_std[ch];
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                dx[i] = match mode {
                    BnMode::Train => scale * (grad_out[i] - (sum_dy + xhat[i] * sum_dy_xhat) / m),
                    BnMode::Eval => scale * grad_out[i],
                };
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}
