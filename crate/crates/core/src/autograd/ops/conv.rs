//! 2-D convolution via batched im2col and GEMM.
//!
//! Samples are unrolled in chunks so that one GEMM covers several images;
//! chunk boundaries are fixed by the shapes alone, which keeps the reduction
//! order (and therefore the result) identical from run to run.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Upper bound on the im2col buffer, in elements.
const COLS_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[batch, in_channels, in_h, in_w], &[out_channels, w_in, kernel_h, kernel_w]) =
            (input, weight)
        else {
            return Err(Error::shape(format!(
                "conv2d expects NCHW input and OIHW weight, got {input:?} and {weight:?}"
            )));
        };
        if w_in != in_channels {
            return Err(Error::shape(format!(
                "conv2d input has {in_channels} channels but weight expects {w_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be at least 1"));
        }
        let (out_h, out_w) = conv_output_size(in_h, in_w, kernel_h, kernel_w, stride, padding)?;
        Ok(ConvGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn chunk(&self) -> usize {
        let per_image = self.patch_len() * self.out_plane();
        (COLS_BUDGET / per_image.max(1)).clamp(1, self.batch)
    }

    /// Multiply-accumulate count of the forward pass.
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.out_plane() * self.patch_len()) as u64
    }
}

/// `floor((H + 2p - K) / s) + 1`, failing when the padded input is smaller than the kernel.
pub fn conv_output_size(
    h: usize,
    w: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if kernel_h > ph || kernel_w > pw {
        return Err(Error::ResolutionBelowMinimum {
            height: h,
            width: w,
            minimum: kernel_h.max(kernel_w).saturating_sub(2 * padding),
        });
    }
    Ok(((ph - kernel_h) / stride + 1, (pw - kernel_w) / stride + 1))
}

/// Unrolls images `[first, first + count)` into a `patch_len x (count * out_plane)` matrix.
fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], first: usize, count: usize, cols: &mut [T]) {
    let plane = g.out_plane();
    let width = count * plane;
    let in_plane = g.in_h * g.in_w;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst_row = &mut cols[row * width..(row + 1) * width];
                for i in 0..count {
                    let src = &input[((first + i) * g.in_channels + c) * in_plane..][..in_plane];
                    let dst = &mut dst_row[i * plane..(i + 1) * plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if iy < 0 || iy >= g.in_h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..][..g.in_w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            *v = if ix < 0 || ix >= g.in_w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into image gradients (inverse of [`im2col`]).
fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], first: usize, count: usize, grad: &mut [T]) {
    let plane = g.out_plane();
    let width = count * plane;
    let in_plane = g.in_h * g.in_w;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src_row = &cols[row * width..(row + 1) * width];
                for i in 0..count {
                    let dst = &mut grad[((first + i) * g.in_channels + c) * in_plane..][..in_plane];
                    let src = &src_row[i * plane..(i + 1) * plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.in_w..][..g.in_w];
                        for ox in 0..g.out_w {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            if ix >= 0 && ix < g.in_w as isize {
                                dst_row[ix as usize] += src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N,Cin,H,W]` with `weight [Cout,Cin,Kh,Kw]`, no bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    let plane = g.out_plane();
    let patch = g.patch_len();
    let chunk = g.chunk();
    let mut out = vec![T::zero(); g.batch * g.out_channels * plane];
    let mut cols = vec![T::zero(); patch * chunk * plane];
    let mut mat = vec![T::zero(); g.out_channels * chunk * plane];
    let w = MatRef::new(weight.data(), g.out_channels, patch);
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        let width = count * plane;
        let cols = &mut cols[..patch * width];
        let mat = &mut mat[..g.out_channels * width];
        im2col(&g, input.data(), first, count, cols);
        gemm(w, MatRef::new(cols, patch, width), T::zero(), mat);
        for co in 0..g.out_channels {
            for i in 0..count {
                let dst = &mut out[((first + i) * g.out_channels + co) * plane..][..plane];
                dst.copy_from_slice(&mat[co * width + i * plane..][..plane]);
            }
        }
        first += count;
    }
    Tensor::from_vec(vec![g.batch, g.out_channels, g.out_h, g.out_w], out)
}

pub struct Conv2dGrads<T> {
    /// Present only when requested.
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    let plane = g.out_plane();
    let patch = g.patch_len();
    if grad_out.len() != g.batch * g.out_channels * plane {
        return Err(Error::shape("conv2d upstream gradient has the wrong size"));
    }
    let chunk = g.chunk();
    let mut grad_w = vec![T::zero(); g.out_channels * patch];
    let mut grad_in = need_input.then(|| vec![T::zero(); input.len()]);
    let mut cols = vec![T::zero(); patch * chunk * plane];
    let mut dcols = vec![T::zero(); if need_input { patch * chunk * plane } else { 0 }];
    let mut dmat = vec![T::zero(); g.out_channels * chunk * plane];
    let w = MatRef::new(weight.data(), g.out_channels, patch);
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        let width = count * plane;
        let cols = &mut cols[..patch * width];
        let dmat = &mut dmat[..g.out_channels * width];
        for co in 0..g.out_channels {
            for i in 0..count {
                dmat[co * width + i * plane..][..plane]
                    .copy_from_slice(&grad_out[((first + i) * g.out_channels + co) * plane..][..plane]);
            }
        }
        im2col(&g, input.data(), first, count, cols);
        let dm = MatRef::new(&dmat[..], g.out_channels, width);
        gemm(dm, MatRef::new(&cols[..], patch, width).t(), T::one(), &mut grad_w);
        if let Some(gi) = grad_in.as_mut() {
            let dcols = &mut dcols[..patch * width];
            gemm(w.t(), dm, T::zero(), dcols);
            col2im(&g, dcols, first, count, gi);
        }
        first += count;
    }
    Ok(Conv2dGrads {
        input: grad_in,
        weight: grad_w,
    })
}
