//! Adaptive average pooling. The output grid is fixed whatever the input
//! size, which is what lets one classifier head consume any resolution.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Half-open source range `[floor(i*len/out), ceil((i+1)*len/out))`.
pub fn adaptive_range(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

pub fn adaptive_avg_pool2d<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::invalid(format!(
            "adaptive_avg_pool2d: output {out_h}x{out_w} must be within input {h}x{w}"
        )));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.chunks(h * w) {
        for i in 0..out_h {
            let (r0, r1) = adaptive_range(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = adaptive_range(j, w, out_w);
                let mut acc = T::zero();
                for r in r0..r1 {
                    acc += plane[r * w + c0..r * w + c1].iter().copied().sum::<T>();
                }
                out.push(acc / T::of(((r1 - r0) * (c1 - c0)) as f64));
            }
        }
    }
    Tensor::from_vec(vec![n, c, out_h, out_w], out)
}

pub fn adaptive_avg_pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    out_h: usize,
    out_w: usize,
    grad_out: &[T],
) -> Vec<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let planes = input_shape[0] * input_shape[1];
    let mut grad = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &grad_out[p * out_h * out_w..][..out_h * out_w];
        let dst = &mut grad[p * h * w..][..h * w];
        for i in 0..out_h {
            let (r0, r1) = adaptive_range(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = adaptive_range(j, w, out_w);
                let share = g[i * out_w + j] / T::of(((r1 - r0) * (c1 - c0)) as f64);
                for r in r0..r1 {
                    for v in &mut dst[r * w + c0..r * w + c1] {
                        *v += share;
                    }
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_means() {
        let x = Tensor::from_vec(vec![1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
        let y = adaptive_avg_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn global_pool_is_plane_mean() {
        let x = Tensor::from_vec(vec![1, 2, 3, 3], (0..18).map(f64::from).collect()).unwrap();
        let y = adaptive_avg_pool2d(&x, 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 13.0]);
    }

    #[test]
    fn overlapping_ranges_for_uneven_split() {
        assert_eq!(adaptive_range(0, 5, 3), (0, 2));
        assert_eq!(adaptive_range(1, 5, 3), (1, 4));
        assert_eq!(adaptive_range(2, 5, 3), (3, 5));
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::full(vec![1, 1, 7, 5], 2.5f64);
        for (oh, ow) in [(1, 1), (2, 3), (7, 5), (3, 2)] {
            let y = adaptive_avg_pool2d(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        }
    }

    #[test]
    fn output_larger_than_input_is_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        assert!(adaptive_avg_pool2d(&x, 3, 1).is_err());
    }
}
