//! Data-parallel primitives with a sequential twin.
//!
//! With the `parallel` feature the default entry points split work over
//! rayon; without it they run the sequential version. Both versions are
//! always compiled so they can be compared directly, and both produce
//! bitwise-identical results: work is only ever split along independent
//! output rows, never along a reduction axis.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar types the engine runs on (`f32` for training, `f64` for
/// gradient checks).
pub trait Real:
    Float + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping
    /// `m x k`, `k x n` and `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of the same storage.
    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

// below this many multiply-adds a GEMM is not worth splitting
#[cfg(feature = "parallel")]
const PAR_GEMM_MIN_WORK: usize = 1 << 18;
#[cfg(feature = "parallel")]
const PAR_GEMM_ROW_BLOCK: usize = 16;

fn check_gemm<T>(a: &MatRef<T>, b: &MatRef<T>, c: &[T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions differ");
    assert!(a.extent() <= a.data.len() && b.extent() <= b.data.len());
    assert_eq!(c.len(), a.rows * b.cols, "gemm output buffer has wrong size");
}

/// `c = alpha * a * b + beta * c` where `c` is row-major, single-threaded.
pub fn gemm_seq<T: Real>(alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T]) {
    check_gemm(&a, &b, c);
    if c.is_empty() {
        return;
    }
    if a.cols == 0 {
        for v in c.iter_mut() {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    let n = b.cols;
    // SAFETY: extents checked above; c is an exclusive borrow
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same contract as [`gemm_seq`], with output rows split across threads.
#[cfg(feature = "parallel")]
pub fn gemm_par<T: Real>(alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T]) {
    use rayon::prelude::*;

    check_gemm(&a, &b, c);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m * k * n < PAR_GEMM_MIN_WORK || m < 2 * PAR_GEMM_ROW_BLOCK || rayon::current_num_threads() < 2 {
        return gemm_seq(alpha, a, b, beta, c);
    }
    let block = m.div_ceil(rayon::current_num_threads()).max(PAR_GEMM_ROW_BLOCK);
    c.par_chunks_mut(block * n).enumerate().for_each(|(i, chunk)| {
        let r0 = i * block;
        let rows = chunk.len() / n;
        let offset = r0 * a.row_stride;
        let sub = MatRef {
            data: &a.data[offset..],
            rows,
            cols: k,
            row_stride: a.row_stride,
            col_stride: a.col_stride,
        };
        gemm_seq(alpha, sub, b, beta, chunk);
    });
}

/// Default GEMM entry point; parallel when the feature is enabled.
pub fn gemm<T: Real>(alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T]) {
    #[cfg(feature = "parallel")]
    {
        gemm_par(alpha, a, b, beta, c)
    }
    #[cfg(not(feature = "parallel"))]
    {
        gemm_seq(alpha, a, b, beta, c)
    }
}

/// Applies `f(row_index, row)` to each `row_len`-sized row of `data`.
pub fn for_each_row<T, F>(data: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(row_len).enumerate().for_each(|(i, r)| f(i, r));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(row_len).enumerate().for_each(|(i, r)| f(i, r));
    }
}

/// Ordered map over `0..n`; the output order never depends on scheduling.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (7, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(1.0, MatRef::new(&a, m, k), MatRef::new(&b, k, n), 0.0, &mut c);
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_views() {
        // a is stored k x m, used as m x k
        let (m, k, n) = (4, 3, 2);
        let at: Vec<f64> = (0..k * m).map(|i| i as f64).collect();
        let mut a = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                a[i * k + p] = at[p * m + i];
            }
        }
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 + i as f64).collect();
        let mut c = vec![0.0; m * n];
        gemm(1.0, MatRef::new(&at, k, m).t(), MatRef::new(&b, k, n), 0.0, &mut c);
        assert_eq!(c, naive(&a, &b, m, k, n));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_gemm_is_bitwise_sequential() {
        let (m, k, n) = (300, 257, 129);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 1000) as f32 / 997.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104_729) % 1000) as f32 / 991.0 - 0.5).collect();
        let mut c1 = vec![0.25f32; m * n];
        let mut c2 = c1.clone();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        pool.install(|| gemm_par(1.0, MatRef::new(&a, m, k), MatRef::new(&b, k, n), 1.0, &mut c1));
        gemm_seq(1.0, MatRef::new(&a, m, k), MatRef::new(&b, k, n), 1.0, &mut c2);
        assert_eq!(c1, c2);
    }
}
