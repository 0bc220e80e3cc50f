use rayon::prelude::*;

use super::gemm::{gemm, MatRef};
use super::{instrument, Shape, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and channel grouping of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams { stride: (1, 1), pad: (0, 0), groups: 1 }
    }
}

impl ConvParams {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvParams { stride: (stride, stride), pad: (pad, pad), groups: 1 }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

pub(crate) fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

pub(crate) fn transpose_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (len - 1) * stride + k;
    (full > 2 * pad).then(|| full - 2 * pad)
}

/// Runs `f` on each `chunk`-sized piece of `out`, in parallel unless a MAC
/// count is being taken on this thread.
fn for_each_chunk(out: &mut [f32], chunk: usize, f: impl Fn(usize, &mut [f32]) + Sync) {
    if instrument::is_active() {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

fn check_bias(op: &'static str, bias: Option<&[f32]>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != c_out => {
            Err(Error::shape(op, format!("bias has {} entries for {c_out} output channels", b.len())))
        }
        _ => Ok(()),
    }
}

/// Grouped 2D cross-correlation with zero padding, lowered to im2col + GEMM.
///
/// `kernel` is `(c_out, c_in / groups, kh, kw)`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&[f32]>, p: ConvParams) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    let (c_out, kh, kw) = (ks.n, ks.h, ks.w);
    let g = p.groups;
    if g == 0 || p.stride.0 == 0 || p.stride.1 == 0 {
        return Err(Error::InvalidArgument("conv2d stride and groups must be positive".into()));
    }
    if !is.c.is_multiple_of(g) || !c_out.is_multiple_of(g) || ks.c * g != is.c {
        return Err(Error::shape("conv2d", format!("kernel {ks} with {g} group(s) does not fit input {is}")));
    }
    check_bias("conv2d", bias, c_out)?;
    let (oh, ow) = match (conv_out_len(is.h, kh, p.stride.0, p.pad.0), conv_out_len(is.w, kw, p.stride.1, p.pad.1)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {is}"))),
    };

    let cig = is.c / g;
    let cog = c_out / g;
    let in_plane = is.plane();
    let out_plane = oh * ow;
    let depth = cig * kh * kw;
    let pointwise = kh == 1 && kw == 1 && p.stride == (1, 1) && p.pad == (0, 0);
    let src = input.data();
    let weights = kernel.data();

    let mut out = Tensor::zeros(Shape::new(is.n, c_out, oh, ow));
    for_each_chunk(out.data_mut(), cog * out_plane, |idx, dst| {
        let (b, grp) = (idx / g, idx % g);
        let x = &src[(b * is.c + grp * cig) * in_plane..][..cig * in_plane];
        let a = MatRef::row_major(&weights[grp * cog * depth..][..cog * depth], depth);
        if pointwise {
            gemm(cog, depth, out_plane, a, MatRef::row_major(x, out_plane), dst);
        } else {
            let mut cols = vec![0.0f32; depth * out_plane];
            im2col(x, cig, (is.h, is.w), (kh, kw), p, (oh, ow), &mut cols);
            gemm(cog, depth, out_plane, a, MatRef::row_major(&cols, out_plane), dst);
        }
        if let Some(bias) = bias {
            for (co, plane) in dst.chunks_mut(out_plane).enumerate() {
                let bv = bias[grp * cog + co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Ok(out)
}

fn im2col(
    x: &[f32],
    channels: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    p: ConvParams,
    (oh, ow): (usize, usize),
    cols: &mut [f32],
) {
    let (sh, sw) = p.stride;
    let (ph, pw) = (p.pad.0 as isize, p.pad.1 as isize);
    let n = oh * ow;
    for ci in 0..channels {
        let plane = &x[ci * h * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * n..][..n];
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..][..ow];
                    let iy = (oy * sh + ky) as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// Transposed convolution (the adjoint of [`conv2d`] with the same kernel,
/// stride and padding), lowered to GEMM + col2im.
///
/// `kernel` is `(c_in, c_out, kh, kw)`. Only `groups == 1` is supported.
pub fn conv2d_transpose(input: &Tensor, kernel: &Tensor, bias: Option<&[f32]>, p: ConvParams) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    let (c_out, kh, kw) = (ks.c, ks.h, ks.w);
    if p.groups != 1 {
        return Err(Error::InvalidArgument("conv2d_transpose supports groups = 1 only".into()));
    }
    if p.stride.0 == 0 || p.stride.1 == 0 {
        return Err(Error::InvalidArgument("conv2d_transpose stride must be positive".into()));
    }
    if ks.n != is.c {
        return Err(Error::shape(
            "conv2d_transpose",
            format!("kernel {ks} expects {} input channels, input is {is}", ks.n),
        ));
    }
    check_bias("conv2d_transpose", bias, c_out)?;
    let (oh, ow) =
        match (transpose_out_len(is.h, kh, p.stride.0, p.pad.0), transpose_out_len(is.w, kw, p.stride.1, p.pad.1)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::shape(
                    "conv2d_transpose",
                    format!("padding {:?} crops away the whole output of {is}", p.pad),
                ))
            }
        };

    let c_in = is.c;
    let in_plane = is.plane();
    let out_plane = oh * ow;
    let depth = c_out * kh * kw;
    let src = input.data();
    // kernel viewed as c_in x (c_out*kh*kw); its transpose maps input columns to patches.
    let a = MatRef::row_major(kernel.data(), depth).transposed();

    let mut out = Tensor::zeros(Shape::new(is.n, c_out, oh, ow));
    for_each_chunk(out.data_mut(), c_out * out_plane, |b, dst| {
        let x = &src[b * c_in * in_plane..][..c_in * in_plane];
        let mut cols = vec![0.0f32; depth * in_plane];
        gemm(depth, c_in, in_plane, a, MatRef::row_major(x, in_plane), &mut cols);
        col2im(&cols, c_out, (is.h, is.w), (kh, kw), p, (oh, ow), dst);
        if let Some(bias) = bias {
            for (co, plane) in dst.chunks_mut(out_plane).enumerate() {
                plane.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
    });
    Ok(out)
}

fn col2im(
    cols: &[f32],
    channels: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    p: ConvParams,
    (oh, ow): (usize, usize),
    out: &mut [f32],
) {
    let (sh, sw) = p.stride;
    let (ph, pw) = (p.pad.0 as isize, p.pad.1 as isize);
    let n = h * w;
    for co in 0..channels {
        let plane = &mut out[co * oh * ow..][..oh * ow];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((co * kh + ky) * kw + kx) * n..][..n];
                for iy in 0..h {
                    let oy = (iy * sh + ky) as isize - ph;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    let dst = &mut plane[oy as usize * ow..][..ow];
                    for (ix, &v) in row[iy * w..][..w].iter().enumerate() {
                        let ox = (ix * sw + kx) as isize - pw;
                        if ox >= 0 && ox < ow as isize {
                            dst[ox as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
