//! Dense matrix kernels shared by convolution and linear layers.

/// Strided row-major view of an `rows x cols` matrix.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `? x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c[m x n] = beta * c + a[m x k] * b[k x n]`, `c` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let max_a = (m - 1) * a.row_stride + (k - 1) * a.col_stride;
    let max_b = (k - 1) * b.row_stride + (n - 1) * b.col_stride;
    assert!(max_a < a.data.len() && max_b < b.data.len());
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_triple_loop_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, Mat::rows(&a, k), Mat::transposed(&bt, k), 1.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let mut want = 1.0;
                for p in 0..k {
                    want += a[i * k + p] * bt[j * k + p];
                }
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }
}
