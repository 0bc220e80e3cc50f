//! Analytic gradients of the volume operators, checked against central
//! finite differences in 64-bit precision.
//!
//! Each check draws a random instance from a seed, forms the scalar
//! objective `L = <upstream, op(inputs)>`, and compares the analytic
//! gradient of `L` with `(L(x + h) - L(x - h)) / 2h` on sampled input
//! coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor64};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted relative error.
pub const REL_TOLERANCE: f64 = 1e-5;
/// Lower bound on the relative-error denominator, so gradients that are
/// zero up to round-off compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;
/// Input coordinates probed per instance.
pub const SAMPLED_COORDS: usize = 200;

/// Registered operator tags, in suite order.
pub const OPS: [&str; 4] = ["soft_argmin", "separate_fuse", "correlation", "sigmoid_gate"];

/// Outcome of one finite-difference check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    op: String,
    seed: u64,
    max_rel_error: f64,
    max_abs_error: f64,
    evaluations: usize,
    pass: bool,
}

impl GradReport {
    fn new(op: &str, seed: u64, max_rel_error: f64, max_abs_error: f64, evaluations: usize) -> Self {
        GradReport {
            op: op.to_string(),
            seed,
            max_rel_error,
            max_abs_error,
            evaluations,
            pass: max_rel_error <= REL_TOLERANCE,
        }
    }

    pub fn op(&self) -> &str {
        &self.op
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error
    }

    pub fn max_abs_error(&self) -> f64 {
        self.max_abs_error
    }

    /// Coordinates compared.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn passed(&self) -> bool {
        self.pass
    }
}

fn index(s: Shape, n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * s.c + c) * s.h + y) * s.w + x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Softmax-weighted mean of the level index per pixel.
pub fn soft_argmin64(volume: &Tensor64) -> Tensor64 {
    let s = volume.shape;
    let mut out = Tensor64::zeros(Shape::new(s.n, 1, s.h, s.w));
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let max = (0..s.c).map(|d| volume.at(n, d, y, x)).fold(f64::NEG_INFINITY, f64::max);
                let (mut z, mut num) = (0.0, 0.0);
                for d in 0..s.c {
                    let e = (volume.at(n, d, y, x) - max).exp();
                    z += e;
                    num += d as f64 * e;
                }
                out.data[index(out.shape, n, 0, y, x)] = num / z;
            }
        }
    }
    out
}

/// `dL/dC(d) = p(d) * (d - d0) * upstream`.
pub fn grad_soft_argmin(volume: &Tensor64, upstream: &Tensor64) -> Tensor64 {
    let s = volume.shape;
    let d0 = soft_argmin64(volume);
    let mut g = Tensor64::zeros(s);
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let max = (0..s.c).map(|d| volume.at(n, d, y, x)).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..s.c).map(|d| (volume.at(n, d, y, x) - max).exp()).sum();
                let mean = d0.at(n, 0, y, x);
                let u = upstream.at(n, 0, y, x);
                for d in 0..s.c {
                    let p = (volume.at(n, d, y, x) - max).exp() / z;
                    g.data[index(s, n, d, y, x)] = p * (d as f64 - mean) * u;
                }
            }
        }
    }
    g
}

/// Per-pixel channel mixing `G(X)[d] = sum_e m[d][e] * X[e]`, the linear
/// stand-in for an aggregation branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMix {
    pub levels: usize,
    /// Row-major `levels x levels`.
    pub matrix: Vec<f64>,
}

impl ChannelMix {
    pub fn identity(levels: usize) -> Self {
        let mut matrix = vec![0.0; levels * levels];
        for d in 0..levels {
            matrix[d * levels + d] = 1.0;
        }
        ChannelMix { levels, matrix }
    }

    pub fn random(levels: usize, rng: &mut impl Rng) -> Self {
        ChannelMix { levels, matrix: (0..levels * levels).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    pub fn apply(&self, x: &Tensor64) -> Tensor64 {
        self.mix(x, false)
    }

    pub fn apply_transposed(&self, x: &Tensor64) -> Tensor64 {
        self.mix(x, true)
    }

    fn mix(&self, x: &Tensor64, transposed: bool) -> Tensor64 {
        let s = x.shape;
        let l = self.levels;
        let mut out = Tensor64::zeros(s);
        for n in 0..s.n {
            for y in 0..s.h {
                for xx in 0..s.w {
                    for d in 0..l {
                        let mut acc = 0.0;
                        for e in 0..l {
                            let m = if transposed { self.matrix[e * l + d] } else { self.matrix[d * l + e] };
                            acc += m * x.at(n, e, y, xx);
                        }
                        out.data[index(s, n, d, y, xx)] = acc;
                    }
                }
            }
        }
        out
    }
}

fn gate(volume: &Tensor64, map: &Tensor64, complement: bool) -> Tensor64 {
    let s = volume.shape;
    let mut out = volume.clone();
    for n in 0..s.n {
        for d in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let a = map.at(n, 0, y, x);
                    out.data[index(s, n, d, y, x)] *= if complement { 1.0 - a } else { a };
                }
            }
        }
    }
    out
}

/// `A * G_d(A * C) + (1 - A) * G_s((1 - A) * C)`.
pub fn separate_fuse64(volume: &Tensor64, attention: &Tensor64, detail: &ChannelMix, smooth: &ChannelMix) -> Tensor64 {
    let d = gate(&detail.apply(&gate(volume, attention, false)), attention, false);
    let s = gate(&smooth.apply(&gate(volume, attention, true)), attention, true);
    Tensor64 { shape: d.shape, data: d.data.iter().zip(&s.data).map(|(a, b)| a + b).collect() }
}

/// Gradients of `<upstream, separate_fuse64(C, A)>` with respect to the
/// volume and the attention map. The map gradient sums over levels.
pub fn grad_separate_fuse(
    volume: &Tensor64,
    attention: &Tensor64,
    upstream: &Tensor64,
    detail: &ChannelMix,
    smooth: &ChannelMix,
) -> (Tensor64, Tensor64) {
    let s = volume.shape;
    let back_d = detail.apply_transposed(upstream);
    let back_s = smooth.apply_transposed(upstream);
    let gd = detail.apply(volume);
    let gs = smooth.apply(volume);
    let mut dc = Tensor64::zeros(s);
    let mut da = Tensor64::zeros(attention.shape);
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let a = attention.at(n, 0, y, x);
                let mut acc = 0.0;
                for d in 0..s.c {
                    let i = index(s, n, d, y, x);
                    dc.data[i] = a * a * back_d.data[i] + (1.0 - a) * (1.0 - a) * back_s.data[i];
                    acc += upstream.data[i] * (2.0 * a * gd.data[i] - 2.0 * (1.0 - a) * gs.data[i]);
                }
                da.data[index(attention.shape, n, 0, y, x)] = acc;
            }
        }
    }
    (dc, da)
}

/// Correlation volume with zero entries where `x - d < 0`.
pub fn correlation64(left: &Tensor64, right: &Tensor64, levels: usize) -> Tensor64 {
    let s = left.shape;
    let os = Shape::new(s.n, levels, s.h, s.w);
    let mut out = Tensor64::zeros(os);
    for n in 0..s.n {
        for d in 0..levels {
            for y in 0..s.h {
                for x in d..s.w {
                    let acc: f64 = (0..s.c).map(|c| left.at(n, c, y, x) * right.at(n, c, y, x - d)).sum();
                    out.data[index(os, n, d, y, x)] = acc / s.c as f64;
                }
            }
        }
    }
    out
}

/// `dF_l(x) = sum_d u(d, x) F_r(x - d) / Nc`, `dF_r(x) = sum_d u(d, x + d) F_l(x + d) / Nc`.
pub fn grad_correlation(left: &Tensor64, right: &Tensor64, upstream: &Tensor64) -> (Tensor64, Tensor64) {
    let s = left.shape;
    let levels = upstream.shape.c;
    let inv = 1.0 / s.c as f64;
    let mut dl = Tensor64::zeros(s);
    let mut dr = Tensor64::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let i = index(s, n, c, y, x);
                    for d in 0..levels {
                        if x >= d {
                            dl.data[i] += inv * upstream.at(n, d, y, x) * right.at(n, c, y, x - d);
                        }
                        if x + d < s.w {
                            dr.data[i] += inv * upstream.at(n, d, y, x + d) * left.at(n, c, y, x + d);
                        }
                    }
                }
            }
        }
    }
    (dl, dr)
}

/// Attention-gated volume `sigmoid(z) * C`.
pub fn sigmoid_gate64(logits: &Tensor64, volume: &Tensor64) -> Tensor64 {
    let a = Tensor64 { shape: logits.shape, data: logits.data.iter().map(|&z| logistic(z)).collect() };
    gate(volume, &a, false)
}

/// Gradients of `<upstream, sigmoid(z) * C>` with respect to the logits and
/// the volume.
pub fn grad_sigmoid_gate(logits: &Tensor64, volume: &Tensor64, upstream: &Tensor64) -> (Tensor64, Tensor64) {
    let s = volume.shape;
    let mut dz = Tensor64::zeros(logits.shape);
    let mut dc = Tensor64::zeros(s);
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let a = logistic(logits.at(n, 0, y, x));
                let mut acc = 0.0;
                for d in 0..s.c {
                    let i = index(s, n, d, y, x);
                    acc += upstream.data[i] * volume.data[i];
                    dc.data[i] = a * upstream.data[i];
                }
                dz.data[index(logits.shape, n, 0, y, x)] = a * (1.0 - a) * acc;
            }
        }
    }
    (dz, dc)
}

fn random64(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor64 {
    Tensor64 { shape, data: (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect() }
}

type Objective = Box<dyn Fn(&[f64]) -> f64>;

/// A random instance of one operator: its inputs flattened into a single
/// vector, the objective over that vector and the analytic gradient.
struct Instance {
    inputs: Vec<f64>,
    objective: Objective,
    gradient: Vec<f64>,
}

fn split(shapes: &[Shape], flat: &[f64]) -> Vec<Tensor64> {
    let mut rest = flat;
    shapes
        .iter()
        .map(|&s| {
            let (head, tail) = rest.split_at(s.numel());
            rest = tail;
            Tensor64 { shape: s, data: head.to_vec() }
        })
        .collect()
}

fn instance(op: &str, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let inst = match op {
        "soft_argmin" => {
            let s = Shape::new(1, 8, 5, 6);
            let volume = random64(s, rng, -3.0, 3.0);
            let upstream = random64(Shape::new(1, 1, 5, 6), rng, -1.0, 1.0);
            let gradient = grad_soft_argmin(&volume, &upstream).data;
            Instance {
                inputs: volume.data,
                objective: Box::new(move |x| {
                    dot(&upstream.data, &soft_argmin64(&Tensor64 { shape: s, data: x.to_vec() }).data)
                }),
                gradient,
            }
        }
        "separate_fuse" => {
            let (sc, sa) = (Shape::new(1, 6, 5, 6), Shape::new(1, 1, 5, 6));
            let volume = random64(sc, rng, -2.0, 2.0);
            let attention = random64(sa, rng, 0.05, 0.95);
            let upstream = random64(sc, rng, -1.0, 1.0);
            let detail = ChannelMix::random(sc.c, rng);
            let smooth = ChannelMix::random(sc.c, rng);
            let (dc, da) = grad_separate_fuse(&volume, &attention, &upstream, &detail, &smooth);
            Instance {
                inputs: [volume.data, attention.data].concat(),
                objective: Box::new(move |x| {
                    let t = split(&[sc, sa], x);
                    dot(&upstream.data, &separate_fuse64(&t[0], &t[1], &detail, &smooth).data)
                }),
                gradient: [dc.data, da.data].concat(),
            }
        }
        "correlation" => {
            let s = Shape::new(1, 3, 4, 9);
            let levels = 5;
            let left = random64(s, rng, -1.0, 1.0);
            let right = random64(s, rng, -1.0, 1.0);
            let upstream = random64(Shape::new(1, levels, s.h, s.w), rng, -1.0, 1.0);
            let (dl, dr) = grad_correlation(&left, &right, &upstream);
            Instance {
                inputs: [left.data, right.data].concat(),
                objective: Box::new(move |x| {
                    let t = split(&[s, s], x);
                    dot(&upstream.data, &correlation64(&t[0], &t[1], levels).data)
                }),
                gradient: [dl.data, dr.data].concat(),
            }
        }
        "sigmoid_gate" => {
            let (sc, sa) = (Shape::new(1, 6, 5, 6), Shape::new(1, 1, 5, 6));
            let logits = random64(sa, rng, -4.0, 4.0);
            let volume = random64(sc, rng, -2.0, 2.0);
            let upstream = random64(sc, rng, -1.0, 1.0);
            let (dz, dc) = grad_sigmoid_gate(&logits, &volume, &upstream);
            Instance {
                inputs: [logits.data, volume.data].concat(),
                objective: Box::new(move |x| {
                    let t = split(&[sa, sc], x);
                    dot(&upstream.data, &sigmoid_gate64(&t[0], &t[1]).data)
                }),
                gradient: [dz.data, dc.data].concat(),
            }
        }
        other => return Err(Error::UnknownCheck(other.to_string())),
    };
    Ok(inst)
}

/// Finite-difference check of a registered operator on the instance drawn
/// from `seed`.
pub fn fd_check(op: &str, seed: u64) -> Result<GradReport> {
    fd_check_perturbed(op, seed, 0.0)
}

/// As [`fd_check`], with `perturbation` added to every analytic gradient
/// entry before comparison. Used to confirm the check can fail.
pub fn fd_check_perturbed(op: &str, seed: u64, perturbation: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = instance(op, &mut rng)?;
    let total = inst.inputs.len();
    let coords = sample(&mut rng, total, SAMPLED_COORDS.min(total));
    let mut x = inst.inputs.clone();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    let mut evaluations = 0;
    for i in coords.iter() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = (inst.objective)(&x);
        x[i] = orig - FD_STEP;
        let minus = (inst.objective)(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = inst.gradient[i] + perturbation;
        let abs = (analytic - numeric).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR));
        evaluations += 1;
    }
    Ok(GradReport::new(op, seed, max_rel, max_abs, evaluations))
}

/// Runs every registered operator on seeds `0..instances`.
pub fn run_suite(instances: u64, perturbation: f64) -> Vec<GradReport> {
    OPS.iter()
        .flat_map(|op| {
            (0..instances).map(move |seed| fd_check_perturbed(op, seed, perturbation).expect("registered op"))
        })
        .collect()
}
