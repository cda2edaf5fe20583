//! Spatial resizing of `[N, C, H, W]` batches.
//!
//! `Nearest` maps output pixel `(i, j)` to input `(floor(i*H/oh), floor(j*W/ow))`;
//! at an exact factor of two that keeps every other row and column.
//! `Bilinear` uses half-pixel centres (`align_corners = false`), with source
//! coordinates clamped at the border.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    #[default]
    Nearest,
    Bilinear,
}

impl std::str::FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            _ => Err(Error::invalid(format!("unknown resize mode `{s}`"))),
        }
    }
}

/// Source index and weight pairs for one output axis.
fn axis_taps(input: usize, output: usize, mode: ResizeMode) -> Vec<[(usize, f64); 2]> {
    (0..output)
        .map(|i| match mode {
            ResizeMode::Nearest => [(i * input / output, 1.0), (0, 0.0)],
            ResizeMode::Bilinear => {
                let src = ((i as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let frac = src - i0 as f64;
                [(i0, 1.0 - frac), (i1, frac)]
            }
        })
        .collect()
}

/// Resize one `h x w` plane into `dst` (`oh x ow`).
pub fn resize_plane<T: Scalar>(src: &[T], h: usize, w: usize, dst: &mut [T], oh: usize, ow: usize, mode: ResizeMode) {
    if (h, w) == (oh, ow) {
        dst.copy_from_slice(src);
        return;
    }
    let rows = axis_taps(h, oh, mode);
    let cols = axis_taps(w, ow, mode);
    for (i, row_taps) in rows.iter().enumerate() {
        for (j, col_taps) in cols.iter().enumerate() {
            let mut acc = 0.0f64;
            for &(r, wr) in row_taps {
                if wr == 0.0 {
                    continue;
                }
                for &(c, wc) in col_taps {
                    if wc != 0.0 {
                        acc += wr * wc * src[r * w + c].as_f64();
                    }
                }
            }
            dst[i * ow + j] = T::of(acc);
        }
    }
}

pub fn resize<T: Scalar>(images: &Tensor<T>, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("resize target {out_h}x{out_w} must be positive")));
    }
    let (n, c, h, w) = images.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(images.clone());
    }
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for (src, dst) in images.data().chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
        resize_plane(src, h, w, dst, out_h, out_w, mode);
    }
    Tensor::from_vec(vec![n, c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indexed(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(vec![1, 1, h, w], (0..h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn nearest_halving_takes_every_other_pixel() {
        let y = resize(&indexed(4, 4), 2, 2, ResizeMode::Nearest).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn same_size_is_identity() {
        let x = indexed(5, 3);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            assert_eq!(resize(&x, 5, 3, mode).unwrap(), x);
        }
    }

    #[test]
    fn bilinear_constant_and_checkerboard() {
        let c = Tensor::full(vec![1, 2, 6, 6], 0.3f64);
        for (oh, ow) in [(3, 3), (4, 5), (9, 2), (1, 1)] {
            let y = resize(&c, oh, ow, ResizeMode::Bilinear).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }
        let board = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(resize(&board, 1, 1, ResizeMode::Bilinear).unwrap().data(), &[0.5]);
    }

    #[test]
    fn zero_target_is_rejected() {
        assert!(resize(&indexed(2, 2), 0, 1, ResizeMode::Nearest).is_err());
    }
}
