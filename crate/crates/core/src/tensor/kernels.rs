//! Row-major dense kernels shared by the tape and the inference path.
//!
//! Inner loops are written over contiguous slices so that the compiler can
//! vectorize them; reductions use several independent accumulators.

use super::Scalar;

const LANES: usize = 16;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    s + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `out = a (m x k) * b (k x n)`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), T::zero(), out);
}

/// `out += a (m x k) * b (k x n)`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), T::one(), out);
}

/// `out (m x k) += a (m x n) * b^T` where `b` is `k x n`.
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    T::gemm(m, n, k, a, (n as isize, 1), b, (1, n as isize), T::one(), out);
}

/// `out (k x n) += a^T * b` where `a` is `m x k` and `b` is `m x n`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    T::gemm(k, m, n, a, (1, k as isize), b, (n as isize, 1), T::one(), out);
}

/// Row-major transpose of a `rows x cols` matrix.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Numerically stable softmax of one row, in place.
#[inline]
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        softmax_row(row);
    }
}

/// Normalizes each row to zero mean and unit variance (biased estimator).
///
/// Writes the normalized rows into `out` and returns the per-row
/// reciprocal standard deviations.
pub fn layer_norm_rows<T: Scalar>(x: &[T], cols: usize, eps: T, out: &mut [T]) -> Vec<T> {
    let n = T::of(cols as f64);
    let mut rstd = Vec::with_capacity(x.len() / cols);
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mean = xr.iter().copied().sum::<T>() / n;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var /= n;
        let r = T::one() / (var + eps).sqrt();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - mean) * r;
        }
        rstd.push(r);
    }
    rstd
}

/// Sinusoidal position code, `rows x dim`.
pub fn sinusoidal_positions<T: Scalar>(rows: usize, dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * dim];
    for pos in 0..rows {
        for i in 0..dim / 2 {
            let freq = (10_000f64).powf(-2.0 * i as f64 / dim as f64);
            let angle = pos as f64 * freq;
            out[pos * dim + 2 * i] = T::of(angle.sin());
            out[pos * dim + 2 * i + 1] = T::of(angle.cos());
        }
    }
    out
}
