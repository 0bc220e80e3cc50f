mod common;

use banet::tensor::{
    activation, add, bilinear_resize, concat_channels, conv2d, conv2d_transpose, sigmoid, softmax_axis1, Activation,
    ConvParams,
};
use banet::{Shape, Tensor};
use common::{conv_oracle, random, rng};
use rand::Rng;

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[test]
fn conv_matches_nested_loops() {
    let mut r = rng(1);
    let x = random(Shape::new(1, 3, 8, 8), &mut r);
    let k = random(Shape::new(4, 3, 3, 3), &mut r);
    let got = conv2d(&x, &k, None, ConvParams::new(1, 1)).unwrap();
    let want = conv_oracle(&x, &k, None, (1, 1), (1, 1), 1);
    assert!(got.max_abs_diff(&want) <= 1e-5);
}

#[test]
fn conv_matches_nested_loops_over_random_configs() {
    let mut r = rng(2);
    for _ in 0..30 {
        let groups = [1, 2, 3][r.gen_range(0..3)];
        let c_in = groups * r.gen_range(1..4);
        let c_out = groups * r.gen_range(1..4);
        let (kh, kw) = (r.gen_range(1..5), r.gen_range(1..5));
        let stride = (r.gen_range(1..3), r.gen_range(1..3));
        let pad = (r.gen_range(0..kh), r.gen_range(0..kw));
        let (h, w) = (r.gen_range(kh..12), r.gen_range(kw..12));
        let x = random(Shape::new(2, c_in, h, w), &mut r);
        let k = random(Shape::new(c_out, c_in / groups, kh, kw), &mut r);
        let bias: Vec<f32> = (0..c_out).map(|_| r.gen_range(-1.0..1.0)).collect();
        let p = ConvParams { stride, pad, groups };
        let got = conv2d(&x, &k, Some(&bias), p).unwrap();
        let want = conv_oracle(&x, &k, Some(&bias), stride, pad, groups);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) <= 1e-5, "{p:?}");
    }
}

#[test]
fn pointwise_identity() {
    let mut r = rng(3);
    let x = random(Shape::new(1, 1, 1, 1), &mut r);
    let k = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
    assert_eq!(conv2d(&x, &k, Some(&[0.0]), ConvParams::default()).unwrap(), x);
}

#[test]
fn conv_is_linear() {
    let mut r = rng(4);
    let (a, b) = (1.7f32, -0.6f32);
    let x = random(Shape::new(1, 4, 9, 7), &mut r);
    let y = random(Shape::new(1, 4, 9, 7), &mut r);
    let k = random(Shape::new(5, 4, 3, 3), &mut r);
    let p = ConvParams::new(2, 1);
    let mixed = add(&x.scale(a), &y.scale(b)).unwrap();
    let lhs = conv2d(&mixed, &k, None, p).unwrap();
    let rhs = add(&conv2d(&x, &k, None, p).unwrap().scale(a), &conv2d(&y, &k, None, p).unwrap().scale(b)).unwrap();
    let scale = lhs.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
    assert!(lhs.max_abs_diff(&rhs) <= 1e-5 * scale);
}

#[test]
fn transpose_is_adjoint_of_conv() {
    let mut r = rng(5);
    for _ in 0..25 {
        let k = r.gen_range(1..5);
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..k);
        let (c_in, c_out) = (r.gen_range(1..4), r.gen_range(1..4));
        // sizes for which the transpose maps back onto the full input grid
        let out_h = r.gen_range(2..6);
        let out_w = r.gen_range(2..6);
        let h = (out_h - 1) * stride + k - 2 * pad;
        let w = (out_w - 1) * stride + k - 2 * pad;
        if h == 0 || w == 0 || h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        let kernel = random(Shape::new(c_out, c_in, k, k), &mut r);
        let x = random(Shape::new(1, c_in, h, w), &mut r);
        let p = ConvParams::new(stride, pad);
        let cx = conv2d(&x, &kernel, None, p).unwrap();
        let y = random(cx.shape(), &mut r);
        let ty = conv2d_transpose(&y, &kernel, None, p).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let (lhs, rhs) = (inner(&cx, &y), inner(&x, &ty));
        assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

fn bilinear_tap(len_in: usize, len_out: usize, dst: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * len_in as f64 / len_out as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len_in - 1);
    let i1 = (i0 + 1).min(len_in - 1);
    (i0, i1, src - i0 as f64)
}

fn resize_oracle(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, y, xx| {
        let (y0, y1, fy) = bilinear_tap(s.h, oh, y);
        let (x0, x1, fx) = bilinear_tap(s.w, ow, xx);
        let v = |yy, xq| x.at(n, c, yy, xq) as f64;
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

#[test]
fn bilinear_closed_form() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let got = bilinear_resize(&x, 4, 4).unwrap();
    assert!(got.max_abs_diff(&resize_oracle(&x, 4, 4)) <= 1e-6);
    let first_row = [0.0, 0.25, 0.75, 1.0];
    for (i, want) in first_row.iter().enumerate() {
        assert!((got.at(0, 0, 0, i) - want).abs() <= 1e-6);
    }
    assert!((got.at(0, 0, 3, 3) - 3.0).abs() <= 1e-6);
}

#[test]
fn bilinear_matches_oracle_on_random_sizes() {
    let mut r = rng(6);
    for _ in 0..20 {
        let x = random(Shape::new(1, 2, r.gen_range(1..9), r.gen_range(1..9)), &mut r);
        let (oh, ow) = (r.gen_range(1..20), r.gen_range(1..20));
        let got = bilinear_resize(&x, oh, ow).unwrap();
        assert!(got.max_abs_diff(&resize_oracle(&x, oh, ow)) <= 1e-5);
    }
}

#[test]
fn softmax_random_normalises() {
    let mut r = rng(7);
    let x = random(Shape::new(1, 5, 3, 3), &mut r).scale(10.0);
    let p = softmax_axis1(&x);
    for i in 0..9 {
        let sum: f32 = (0..5).map(|c| p.data()[c * 9 + i]).sum();
        assert!((sum - 1.0).abs() <= 1e-6);
    }
    assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
}

#[test]
fn sigmoid_is_monotone_and_open() {
    let mut r = rng(8);
    let mut xs: Vec<f32> = (0..500).map(|_| r.gen_range(-100.0..100.0)).collect();
    xs.sort_by(f32::total_cmp);
    let ys: Vec<f32> = xs.iter().map(|&x| sigmoid(x)).collect();
    assert!(ys.windows(2).all(|w| w[0] <= w[1]));
    assert!(ys.iter().all(|&y| y > 0.0 && y < 1.0));
    let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![7.0, -1.0, 3.0]).unwrap();
    assert_eq!(activation(&t, Activation::Relu6).data(), &[6.0, 0.0, 3.0]);
}

#[test]
fn add_concat_round_trip() {
    let mut r = rng(9);
    let a = random(Shape::new(1, 2, 4, 4), &mut r);
    let b = random(Shape::new(1, 3, 4, 4), &mut r);
    assert_eq!(add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
    let c = concat_channels(&[&a, &b]).unwrap();
    assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
    assert_eq!(c.slice_channels(0, 2).unwrap(), a);
    assert_eq!(c.slice_channels(2, 5).unwrap(), b);
    assert!(add(&a, &b).is_err());
    assert!(concat_channels(&[&a, &random(Shape::new(1, 1, 4, 5), &mut r)]).is_err());
}

#[test]
fn kernels_are_deterministic() {
    let mut r = rng(10);
    let x = random(Shape::new(2, 16, 24, 24), &mut r);
    let k = random(Shape::new(32, 16, 3, 3), &mut r);
    let a = conv2d(&x, &k, None, ConvParams::new(1, 1)).unwrap();
    let b = conv2d(&x, &k, None, ConvParams::new(1, 1)).unwrap();
    assert_eq!(a.data(), b.data());
    let t = random(Shape::new(2, 16, 6, 6), &mut r);
    let kt = random(Shape::new(16, 8, 4, 4), &mut r);
    let p = ConvParams::new(2, 1);
    assert_eq!(conv2d_transpose(&t, &kt, None, p).unwrap(), conv2d_transpose(&t, &kt, None, p).unwrap());
}
