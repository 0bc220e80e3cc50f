#![allow(dead_code)]

use banet::model::ParamRole;
use banet::nn::Trace;
use banet::{Shape, Tensor, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Shape, rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

pub fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, rng, -1.0, 1.0)
}

/// Random weights for every layer of a trace, including non-trivial
/// normalisation parameters.
pub fn random_store(trace: &Trace, seed: u64) -> WeightStore {
    let mut rng = rng(seed);
    let mut store = WeightStore::new();
    for layer in &trace.layers {
        let bound = 1.0 / (layer.spec.fan_in() as f32).sqrt();
        for p in layer.spec.params(&layer.name) {
            let values = (0..p.numel())
                .map(|_| match p.role {
                    ParamRole::Kernel | ParamRole::Bias => rng.gen_range(-bound..bound),
                    ParamRole::NormScale => rng.gen_range(0.5..1.5),
                    ParamRole::NormShift => rng.gen_range(-0.1..0.1),
                })
                .collect();
            store.insert(p.name, p.dims, values).unwrap();
        }
    }
    store
}

/// Overwrites every value of a parameter.
pub fn fill(store: &mut WeightStore, name: &str, value: f32) {
    store.get_mut(name).unwrap().values.iter_mut().for_each(|v| *v = value);
}

/// Copies every parameter under `from.` to the same path under `to.`.
pub fn copy_prefix(store: &mut WeightStore, from: &str, to: &str) {
    let copies: Vec<_> = store
        .iter()
        .filter_map(|(name, p)| {
            name.strip_prefix(&format!("{from}."))
                .map(|rest| (format!("{to}.{rest}"), p.dims.clone(), p.values.clone()))
        })
        .collect();
    for (name, dims, values) in copies {
        store.remove(&name);
        store.insert(name, dims, values).unwrap();
    }
}

/// Direct nested-loop convolution.
pub fn conv_oracle(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&[f32]>,
    stride: (usize, usize),
    pad: (usize, usize),
    groups: usize,
) -> Tensor {
    let (s, ks) = (x.shape(), k.shape());
    let oh = (s.h + 2 * pad.0 - ks.h) / stride.0 + 1;
    let ow = (s.w + 2 * pad.1 - ks.w) / stride.1 + 1;
    let (cin_g, cout_g) = (s.c / groups, ks.n / groups);
    Tensor::from_fn(Shape::new(s.n, ks.n, oh, ow), |n, o, y, x_| {
        let g = o / cout_g;
        let mut acc = bias.map_or(0.0, |b| b[o]) as f64;
        for ci in 0..cin_g {
            for ky in 0..ks.h {
                for kx in 0..ks.w {
                    let iy = (y * stride.0 + ky) as isize - pad.0 as isize;
                    let ix = (x_ * stride.1 + kx) as isize - pad.1 as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        acc += k.at(o, ci, ky, kx) as f64 * x.at(n, g * cin_g + ci, iy as usize, ix as usize) as f64;
                    }
                }
            }
        }
        acc as f32
    })
}

/// Nested-loop correlation volume.
pub fn correlation_oracle(l: &Tensor, r: &Tensor, levels: usize) -> Tensor {
    let s = l.shape();
    Tensor::from_fn(Shape::new(s.n, levels, s.h, s.w), |n, d, y, x| {
        if x < d {
            return 0.0;
        }
        let mut acc = 0.0f64;
        for c in 0..s.c {
            acc += l.at(n, c, y, x) as f64 * r.at(n, c, y, x - d) as f64;
        }
        (acc / s.c as f64) as f32
    })
}

/// Per-pixel softmax-weighted level mean.
pub fn soft_argmin_oracle(c: &Tensor) -> Tensor {
    let s = c.shape();
    Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
        let max = (0..s.c).map(|d| c.at(n, d, y, x) as f64).fold(f64::MIN, f64::max);
        let z: f64 = (0..s.c).map(|d| (c.at(n, d, y, x) as f64 - max).exp()).sum();
        (0..s.c).map(|d| d as f64 * (c.at(n, d, y, x) as f64 - max).exp() / z).sum::<f64>() as f32
    })
}

/// Random texture pair where right-view pixel `x - shift` shows the same
/// content as left-view pixel `x`, i.e. true disparity `shift` everywhere.
pub fn shifted_pair(shape: Shape, shift: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let wide = random(Shape::new(shape.n, shape.c, shape.h, shape.w + shift), rng);
    let left = Tensor::from_fn(shape, |n, c, y, x| wide.at(n, c, y, x));
    let right = Tensor::from_fn(shape, |n, c, y, x| wide.at(n, c, y, x + shift));
    (left, right)
}
