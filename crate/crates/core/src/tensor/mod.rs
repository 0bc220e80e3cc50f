//! Dense `(n, c, h, w)` tensors and the numerical kernels the network is
//! assembled from.
//!
//! Storage is row-major with `w` varying fastest. All kernels are pure
//! functions of their inputs; any internal parallelism splits work only
//! along axes that carry no floating-point reduction, so results are
//! bitwise identical regardless of thread count.

mod conv;
mod gemm;
pub mod instrument;
mod ops;

use std::fmt;

pub use conv::{conv2d, conv2d_transpose, ConvParams};
pub(crate) use conv::{conv_out_len, transpose_out_len};
pub use ops::{
    activation, add, affine_channels, bilinear_resize, concat_channels, hadamard_broadcast, sigmoid, softmax_axis1,
    Activation,
};

use crate::error::{Error, Result};

/// Extent of a 4-axis tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::shape("tensor", format!("{} elements supplied for shape {shape}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics on a zero-sized shape; use [`Tensor::from_vec`] for checked construction.
    pub fn full(shape: Shape, value: f32) -> Self {
        shape.validate().expect("tensor dimensions must be positive");
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        t.data[i] = f(n, c, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h * w` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    /// Channels `[start, end)` of every batch item.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.shape.c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{end} out of bounds for {}", self.shape),
            ));
        }
        let p = self.shape.plane();
        let shape = Shape::new(self.shape.n, end - start, self.shape.h, self.shape.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let base = n * self.shape.c * p;
            data.extend_from_slice(&self.data[base + start * p..base + end * p]);
        }
        Ok(Tensor { shape, data })
    }

    /// Zero-extends the spatial extent to `h x w` at the bottom and right.
    pub fn pad_to(&self, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape;
        if h < s.h || w < s.w {
            return Err(Error::shape("pad_to", format!("cannot pad {s} down to {h}x{w}")));
        }
        if h == s.h && w == s.w {
            return Ok(self.clone());
        }
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    let src = self.offset(n, c, y, 0);
                    let dst = out.offset(n, c, y, 0);
                    out.data[dst..dst + s.w].copy_from_slice(&self.data[src..src + s.w]);
                }
            }
        }
        Ok(out)
    }

    /// Keeps the top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape;
        if h == 0 || w == 0 || h > s.h || w > s.w {
            return Err(Error::shape("crop", format!("cannot crop {s} to {h}x{w}")));
        }
        if h == s.h && w == s.w {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..h {
                    let src = self.offset(n, c, y, 0);
                    data.extend_from_slice(&self.data[src..src + w]);
                }
            }
        }
        Ok(Tensor { shape: Shape::new(s.n, s.c, h, w), data })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor64 {
        Tensor64 { shape: self.shape, data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

/// Double-precision twin of [`Tensor`], used only by the gradient checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor64 {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor64 {
    pub fn zeros(shape: Shape) -> Self {
        Tensor64 { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::shape("tensor64", format!("{} elements supplied for shape {shape}", data.len())));
        }
        Ok(Tensor64 { shape, data })
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn to_f32(&self) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| v as f32).collect() }
    }
}
