//! Single-precision matrix product used by the convolution kernels.
//!
//! The fast path is `matrixmultiply`'s packed kernel. Under instrumentation
//! a plain triple loop runs instead and counts every multiply.

use super::instrument;

/// Strided read-only view of an `rows x cols` matrix.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        MatRef { data, row_stride: cols, col_stride: 1 }
    }

    pub fn transposed(self) -> Self {
        MatRef { data: self.data, row_stride: self.col_stride, col_stride: self.row_stride }
    }

    fn covers(&self, rows: usize, cols: usize) -> bool {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.row_stride + c * self.col_stride]
    }
}

/// `out = a * b` with `a: m x k`, `b: k x n`, `out: m x n` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, out: &mut [f32]) {
    assert!(m > 0 && k > 0 && n > 0, "gemm with an empty dimension");
    assert!(a.covers(m, k) && b.covers(k, n) && out.len() >= m * n, "gemm operand too small");
    if instrument::is_active() {
        gemm_counted(m, k, n, a, b, out);
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the borrowed slices, and `out` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gemm_counted(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, out: &mut [f32]) {
    let mut macs = 0u64;
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.fill(0.0);
        for p in 0..k {
            let av = a.get(i, p);
            for (j, o) in row.iter_mut().enumerate() {
                *o += av * b.get(p, j);
                macs += 1;
            }
        }
    }
    instrument::record(macs);
}
