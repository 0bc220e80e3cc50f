//! Cost-volume construction, attention gating and fusion, disparity
//! regression and learned convex upsampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{hadamard_broadcast, instrument, Shape, Tensor};

/// Ratio between the full-resolution grid and the cost-volume grid.
pub const UPSAMPLE_FACTOR: usize = 4;
/// Coarse neighbours (3x3) mixed for every fine pixel.
pub const UPSAMPLE_NEIGHBORS: usize = 9;
/// Channels of the convex-upsampling weight tensor.
pub const UPSAMPLE_CHANNELS: usize = UPSAMPLE_NEIGHBORS * UPSAMPLE_FACTOR * UPSAMPLE_FACTOR;

/// Matching scores `(n, levels, h, w)` on the quarter-resolution grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume(Tensor);

impl CostVolume {
    pub fn new(t: Tensor) -> Self {
        CostVolume(t)
    }

    pub fn levels(&self) -> usize {
        self.0.shape().c
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Single-channel gating map with values in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap(Tensor);

impl AttentionMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().c != 1 {
            return Err(Error::shape("attention", format!("map must have one channel, got {}", t.shape())));
        }
        Ok(AttentionMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// `1 - A`, the smooth-region map.
    pub fn complement(&self) -> Tensor {
        self.0.map(|a| 1.0 - a)
    }
}

/// Per-pixel horizontal disparity `(n, 1, h, w)` in pixels of its own grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap(Tensor);

impl DisparityMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().c != 1 {
            return Err(Error::shape("disparity", format!("map must have one channel, got {}", t.shape())));
        }
        Ok(DisparityMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Fraction of a `levels x width` volume row whose right-image column falls
/// left of the image (`x - d < 0`) and is therefore zero-filled.
pub fn zero_fill_fraction(levels: usize, width: usize) -> f64 {
    let filled: usize = (0..levels).map(|d| d.min(width)).sum();
    filled as f64 / (levels * width) as f64
}

/// `C(d, y, x) = <F_l(y, x), F_r(y, x - d)> / Nc`, zero where `x - d < 0`.
///
/// The right features are zero-extended on the left so every level runs
/// the same full-width dot products.
pub fn build_correlation(left: &Tensor, right: &Tensor, levels: usize) -> Result<CostVolume> {
    let s = left.shape();
    if right.shape() != s {
        return Err(Error::shape("build_correlation", format!("left {s} vs right {}", right.shape())));
    }
    if levels == 0 {
        return Err(Error::InvalidArgument("correlation needs at least one disparity level".into()));
    }
    if levels > s.w {
        log::warn!(
            "correlation: {levels} disparity levels exceed the {}-column feature width; upper levels are mostly zero",
            s.w
        );
    }
    let (nc, h, w) = (s.c, s.h, s.w);
    let padded_w = w + levels;
    let mut padded = vec![0.0f32; s.n * nc * h * padded_w];
    for (row, dst) in right.data().chunks(w).zip(padded.chunks_mut(padded_w)) {
        dst[levels..].copy_from_slice(row);
    }
    let inv = 1.0 / nc as f32;
    let lhs = left.data();
    let counting = instrument::is_active();

    let mut out = Tensor::zeros(Shape::new(s.n, levels, h, w));
    let fill = |idx: usize, dst: &mut [f32]| {
        let (b, d) = (idx / levels, idx % levels);
        for y in 0..h {
            let acc = &mut dst[y * w..][..w];
            for c in 0..nc {
                let l = &lhs[((b * nc + c) * h + y) * w..][..w];
                let r = &padded[((b * nc + c) * h + y) * padded_w + levels - d..][..w];
                for ((a, &lv), &rv) in acc.iter_mut().zip(l).zip(r) {
                    *a += lv * rv;
                }
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        if counting {
            instrument::record((h * w * nc) as u64);
        }
    };
    if counting {
        out.data_mut().chunks_mut(h * w).enumerate().for_each(|(i, c)| fill(i, c));
    } else {
        out.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(i, c)| fill(i, c));
    }
    Ok(CostVolume(out))
}

/// Splits the volume into detailed (`A * C`) and smooth (`(1 - A) * C`) parts.
pub fn separate(volume: &CostVolume, attention: &AttentionMap) -> Result<(CostVolume, CostVolume)> {
    let detailed = hadamard_broadcast(&volume.0, &attention.0)?;
    let smooth = hadamard_broadcast(&volume.0, &attention.complement())?;
    Ok((CostVolume(detailed), CostVolume(smooth)))
}

/// `A * C_d' + (1 - A) * C_s'`.
///
/// Clamped to the segment between the two inputs, so equal inputs are
/// returned unchanged and rounding never leaves the convex hull. `A = 1`
/// returns `C_d'` and `A = 0` returns `C_s'` bit for bit.
pub fn fuse(detailed: &CostVolume, smooth: &CostVolume, attention: &AttentionMap) -> Result<CostVolume> {
    let s = detailed.0.shape();
    let a = attention.0.shape();
    if smooth.0.shape() != s || a.c != 1 || (a.n, a.h, a.w) != (s.n, s.h, s.w) {
        return Err(Error::shape("fuse", format!("detailed {s}, smooth {}, attention {a}", smooth.0.shape())));
    }
    let plane = s.plane();
    let mut out = smooth.0.clone();
    for (i, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let src = detailed.0.plane(i / s.c, i % s.c);
        let gate = attention.0.plane(i / s.c, 0);
        for ((o, &x), &g) in dst.iter_mut().zip(src).zip(gate) {
            let y = *o;
            *o = (g * x + (1.0 - g) * y).clamp(x.min(y), x.max(y));
        }
    }
    Ok(CostVolume(out))
}

/// Softmax-weighted mean of the disparity indices at every pixel.
pub fn soft_argmin(volume: &CostVolume) -> Result<DisparityMap> {
    let s = volume.0.shape();
    let plane = s.plane();
    let top = (s.c - 1) as f32;
    let src = volume.0.data();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    for (b, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let block = &src[b * s.c * plane..][..s.c * plane];
        let mut max = vec![f32::NEG_INFINITY; plane];
        for d in 0..s.c {
            for (m, &v) in max.iter_mut().zip(&block[d * plane..][..plane]) {
                *m = m.max(v);
            }
        }
        let mut sum = vec![0.0f32; plane];
        let mut num = vec![0.0f32; plane];
        for d in 0..s.c {
            let level = d as f32;
            for p in 0..plane {
                let e = (block[d * plane + p] - max[p]).exp();
                sum[p] += e;
                num[p] += level * e;
            }
        }
        for (o, (n, z)) in dst.iter_mut().zip(num.iter().zip(&sum)) {
            *o = (n / z).clamp(0.0, top);
        }
    }
    instrument::record((s.n * s.c * plane) as u64);
    DisparityMap::new(out)
}

/// Full-resolution disparity as per-pixel convex combinations of the 3x3
/// coarse neighbourhood. Weight channel `k * 16 + sy * 4 + sx` holds the
/// logit of neighbour `k` (row-major over offsets -1..=1) for sub-pixel
/// `(sy, sx)` of a coarse cell. Coarse values are scaled by 4 into
/// full-resolution pixels; neighbours outside the grid clamp to the edge.
pub fn convex_upsample(coarse: &DisparityMap, weights: &Tensor) -> Result<DisparityMap> {
    let s = coarse.0.shape();
    let ws = weights.shape();
    if ws.c != UPSAMPLE_CHANNELS || (ws.n, ws.h, ws.w) != (s.n, s.h, s.w) {
        return Err(Error::shape(
            "convex_upsample",
            format!("weights {ws} do not match disparity {s} with {UPSAMPLE_CHANNELS} channels"),
        ));
    }
    let f = UPSAMPLE_FACTOR;
    let (h, w) = (s.h, s.w);
    let (oh, ow) = (h * f, w * f);
    let plane = h * w;
    let scale = f as f32;
    let counting = instrument::is_active();

    let mut out = Tensor::zeros(Shape::new(s.n, 1, oh, ow));
    let fill = |b: usize, dst: &mut [f32]| {
        let d0 = coarse.0.plane(b, 0);
        let wt = &weights.data()[b * UPSAMPLE_CHANNELS * plane..][..UPSAMPLE_CHANNELS * plane];
        let mut logits = [0.0f32; UPSAMPLE_NEIGHBORS];
        let mut values = [0.0f32; UPSAMPLE_NEIGHBORS];
        for y in 0..h {
            for x in 0..w {
                let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                for (k, v) in values.iter_mut().enumerate() {
                    let ny = (y as isize + k as isize / 3 - 1).clamp(0, h as isize - 1) as usize;
                    let nx = (x as isize + k as isize % 3 - 1).clamp(0, w as isize - 1) as usize;
                    *v = scale * d0[ny * w + nx];
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
                for sy in 0..f {
                    for sx in 0..f {
                        let sub = sy * f + sx;
                        let mut max = f32::NEG_INFINITY;
                        for (k, l) in logits.iter_mut().enumerate() {
                            *l = wt[(k * f * f + sub) * plane + y * w + x];
                            max = max.max(*l);
                        }
                        let (mut z, mut acc) = (0.0f32, 0.0f32);
                        for (l, v) in logits.iter().zip(&values) {
                            let e = (l - max).exp();
                            z += e;
                            acc += e * v;
                        }
                        dst[(y * f + sy) * ow + x * f + sx] = (acc / z).clamp(lo, hi);
                    }
                }
            }
        }
    };
    if counting {
        out.data_mut().chunks_mut(oh * ow).enumerate().for_each(|(b, d)| fill(b, d));
        instrument::record((s.n * oh * ow * UPSAMPLE_NEIGHBORS) as u64);
    } else {
        out.data_mut().par_chunks_mut(oh * ow).enumerate().for_each(|(b, d)| fill(b, d));
    }
    DisparityMap::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_features_correlate_to_one() {
        let f = Tensor::full(Shape::new(1, 8, 3, 6), 1.0);
        let c = build_correlation(&f, &f, 4).unwrap();
        for d in 0..4 {
            for y in 0..3 {
                for x in 0..6 {
                    let want = if x >= d { 1.0 } else { 0.0 };
                    assert_eq!(c.tensor().at(0, d, y, x), want);
                }
            }
        }
    }

    #[test]
    fn out_of_range_entries_are_exact_positive_zero() {
        let l = random(Shape::new(2, 3, 4, 5), 1);
        let r = random(Shape::new(2, 3, 4, 5), 2);
        let c = build_correlation(&l, &r, 7).unwrap();
        for b in 0..2 {
            for d in 0..7 {
                for y in 0..4 {
                    for x in 0..d.min(5) {
                        assert_eq!(c.tensor().at(b, d, y, x).to_bits(), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_fill_fraction_counts_left_edge() {
        assert_eq!(zero_fill_fraction(1, 10), 0.0);
        // levels 0..4 over width 4 fill 0+1+2+3 of 16 cells
        assert_eq!(zero_fill_fraction(4, 4), 6.0 / 16.0);
        // beyond the width a level is entirely zero
        assert_eq!(zero_fill_fraction(3, 1), 2.0 / 3.0);
    }

    #[test]
    fn separate_boundaries() {
        let c = CostVolume::new(random(Shape::new(1, 4, 3, 3), 3));
        let ones = AttentionMap::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0)).unwrap();
        let (d, s) = separate(&c, &ones).unwrap();
        assert_eq!(d, c);
        assert!(s.tensor().data().iter().all(|&v| v == 0.0));
        let half = AttentionMap::new(Tensor::full(Shape::new(1, 1, 3, 3), 0.5)).unwrap();
        let (d, s) = separate(&c, &half).unwrap();
        assert_eq!(d, s);
        assert_eq!(d.tensor(), &c.tensor().scale(0.5));
        let wrong = AttentionMap::new(Tensor::full(Shape::new(1, 1, 3, 2), 0.5)).unwrap();
        assert!(separate(&c, &wrong).is_err());
    }

    #[test]
    fn fuse_boundaries() {
        let x = CostVolume::new(random(Shape::new(1, 4, 3, 3), 4));
        let y = CostVolume::new(random(Shape::new(1, 4, 3, 3), 5));
        let ones = AttentionMap::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0)).unwrap();
        assert_eq!(fuse(&x, &y, &ones).unwrap(), x);
        let a = AttentionMap::new(random(Shape::new(1, 1, 3, 3), 6).map(|v| 0.5 + 0.49 * v)).unwrap();
        assert_eq!(fuse(&x, &x, &a).unwrap(), x);
    }

    #[test]
    fn soft_argmin_uniform_and_peaked() {
        let u = CostVolume::new(Tensor::full(Shape::new(1, 48, 2, 2), 0.3));
        for v in soft_argmin(&u).unwrap().tensor().data() {
            assert!((v - 23.5).abs() < 1e-5);
        }
        let peaked =
            CostVolume::new(Tensor::from_fn(Shape::new(1, 48, 2, 2), |_, d, _, _| if d == 7 { 30.0 } else { 0.0 }));
        for v in soft_argmin(&peaked).unwrap().tensor().data() {
            assert!((v - 7.0).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn convex_upsample_constant_and_center() {
        let d0 = DisparityMap::new(Tensor::full(Shape::new(1, 1, 3, 4), 2.5)).unwrap();
        let w = random(Shape::new(1, UPSAMPLE_CHANNELS, 3, 4), 9).scale(5.0);
        let d1 = convex_upsample(&d0, &w).unwrap();
        assert_eq!(d1.tensor().shape(), Shape::new(1, 1, 12, 16));
        assert!(d1.tensor().data().iter().all(|&v| v == 10.0));

        let coarse = random(Shape::new(1, 1, 3, 4), 10).map(|v| 5.0 + v);
        let d0 = DisparityMap::new(coarse.clone()).unwrap();
        let centre =
            Tensor::from_fn(Shape::new(1, UPSAMPLE_CHANNELS, 3, 4), |_, c, _, _| if c / 16 == 4 { 30.0 } else { 0.0 });
        let d1 = convex_upsample(&d0, &centre).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let want = 4.0 * coarse.at(0, 0, y / 4, x / 4);
                assert!((d1.tensor().at(0, 0, y, x) - want).abs() < 1e-4);
            }
        }
        assert!(convex_upsample(&d0, &Tensor::zeros(Shape::new(1, 143, 3, 4))).is_err());
    }
}
