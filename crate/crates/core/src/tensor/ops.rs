use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Largest `f32` below one; sigmoid outputs are clamped into
/// `[f32::MIN_POSITIVE, SIGMOID_CEIL]` so they never reach 0 or 1.
const SIGMOID_CEIL: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Relu6,
    Sigmoid,
}

pub fn sigmoid(x: f32) -> f32 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f32::MIN_POSITIVE, SIGMOID_CEIL)
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Relu6 => input.map(|v| v.clamp(0.0, 6.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{} vs {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// `out[n, c] = x[n, c] * scale[c] + shift[c]`.
pub fn affine_channels(x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let s = x.shape();
    if scale.len() != s.c || shift.len() != s.c {
        return Err(Error::shape(
            "affine_channels",
            format!("{} scale / {} shift entries for {s}", scale.len(), shift.len()),
        ));
    }
    let mut out = x.clone();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        chunk.iter_mut().for_each(|v| *v = *v * scale[c] + shift[c]);
    }
    Ok(out)
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat_channels of an empty list".into()))?.shape();
    let mut channels = 0;
    for t in parts {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat_channels", format!("{s} vs {first}")));
        }
        channels += s.c;
    }
    let shape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for t in parts {
            let block = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * block..(n + 1) * block]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Multiplies every channel of `volume` by the single-channel `map`.
pub fn hadamard_broadcast(volume: &Tensor, map: &Tensor) -> Result<Tensor> {
    let vs = volume.shape();
    let ms = map.shape();
    if ms.c != 1 || (ms.n, ms.h, ms.w) != (vs.n, vs.h, vs.w) {
        return Err(Error::shape("hadamard_broadcast", format!("map {ms} cannot gate volume {vs}")));
    }
    let plane = vs.plane();
    let mut out = volume.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let m = map.plane(i / vs.c, 0);
        chunk.iter_mut().zip(m).for_each(|(v, a)| *v *= a);
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centres (`align_corners = false`)
/// and edge clamping.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bilinear_resize", format!("target {out_h}x{out_w}")));
    }
    let s = input.shape();
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(input.clone());
    }
    let ys = axis_taps(s.h, out_h);
    let xs = axis_taps(s.w, out_w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    let src = input.data();
    let in_plane = s.plane();
    out.data_mut().par_chunks_mut(out_h * out_w).enumerate().for_each(|(i, dst)| {
        let plane = &src[i * in_plane..][..in_plane];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let r0 = &plane[y0 * s.w..][..s.w];
            let r1 = &plane[y1 * s.w..][..s.w];
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = r0[x0] * (1.0 - lx) + r0[x1] * lx;
                let bottom = r1[x0] * (1.0 - lx) + r1[x1] * lx;
                dst[oy * out_w + ox] = top * (1.0 - ly) + bottom * ly;
            }
        }
    });
    Ok(out)
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

/// Numerically stable softmax over the channel axis at every `(n, y, x)`.
pub fn softmax_axis1(input: &Tensor) -> Tensor {
    let s = input.shape();
    let plane = s.plane();
    let mut out = input.clone();
    let src = input.data();
    out.data_mut().par_chunks_mut(s.c * plane).enumerate().for_each(|(n, dst)| {
        let block = &src[n * s.c * plane..][..s.c * plane];
        for p in 0..plane {
            let max = (0..s.c).map(|c| block[c * plane + p]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for c in 0..s.c {
                let e = (block[c * plane + p] - max).exp();
                dst[c * plane + p] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for c in 0..s.c {
                dst[c * plane + p] *= inv;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(100.0) < 1.0);
        assert!(sigmoid(-1000.0) > 0.0);
        assert!((sigmoid(20.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn relu6_clamps() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![7.0, -1.0, 3.0]).unwrap();
        assert_eq!(activation(&t, Activation::Relu6).data(), &[6.0, 0.0, 3.0]);
        assert_eq!(activation(&t, Activation::Relu).data(), &[7.0, 0.0, 3.0]);
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let t = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1000.0, 0.0]).unwrap();
        let p = softmax_axis1(&t);
        assert_eq!(p.data()[0], 1.0);
        assert!(p.data()[1] < 1e-30);
        assert!(p.is_finite());
    }

    #[test]
    fn softmax_uniform() {
        let t = Tensor::full(Shape::new(1, 48, 2, 3), 0.7);
        for v in softmax_axis1(&t).data() {
            assert!((v - 1.0 / 48.0).abs() < 1e-7);
        }
    }

    #[test]
    fn hadamard_rejects_multi_channel_map() {
        let v = Tensor::zeros(Shape::new(1, 4, 3, 3));
        assert!(hadamard_broadcast(&v, &Tensor::zeros(Shape::new(1, 2, 3, 3))).is_err());
        assert!(hadamard_broadcast(&v, &Tensor::zeros(Shape::new(1, 1, 3, 2))).is_err());
    }

    #[test]
    fn concat_orders_arguments() {
        let a = Tensor::full(Shape::new(2, 2, 4, 4), 1.0);
        let b = Tensor::full(Shape::new(2, 3, 4, 4), 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 5, 4, 4));
        assert_eq!(c.slice_channels(0, 2).unwrap(), a);
        assert_eq!(c.slice_channels(2, 5).unwrap(), b);
        assert!(concat_channels(&[&a, &Tensor::zeros(Shape::new(2, 1, 4, 5))]).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let t = Tensor::from_fn(Shape::new(1, 2, 3, 5), |_, c, y, x| (c + y * x) as f32);
        assert_eq!(bilinear_resize(&t, 3, 5).unwrap(), t);
        let k = Tensor::full(Shape::new(1, 1, 3, 5), 4.25);
        for v in bilinear_resize(&k, 7, 2).unwrap().data() {
            assert_eq!(*v, 4.25);
        }
    }
}
