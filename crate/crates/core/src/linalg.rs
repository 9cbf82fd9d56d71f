//! Dense products that nalgebra would otherwise route through a transposed
//! copy or a dot-product loop.

use nalgebra::DMatrix;

/// `aᵀ · b` for column-major `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (k, m, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut c = DMatrix::<f64>::zeros(m, n);
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: all three buffers are dense column-major with the strides
    // given; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

/// `a · bᵀ` for column-major `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let (m, k, n) = (a.nrows(), a.ncols(), b.nrows());
    let mut c = DMatrix::<f64>::zeros(m, n);
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

/// `aᵀ · v`, one contiguous dot product per column of `a`.
pub(crate) fn gemv_tn(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), v.len());
    let k = a.nrows();
    if k == 0 {
        return vec![0.0; a.ncols()];
    }
    a.as_slice().chunks_exact(k).map(|col| dot(col, v)).collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_nalgebra() {
        let a = DMatrix::from_fn(7, 5, |i, j| (i * 3 + j) as f64 * 0.1 - 1.0);
        let b = DMatrix::from_fn(7, 4, |i, j| (i + 2 * j) as f64 * 0.2 - 0.5);
        assert!((gemm_tn(&a, &b) - a.transpose() * &b).amax() < 1e-12);
        let c = DMatrix::from_fn(6, 5, |i, j| (i * j) as f64 * 0.05);
        assert!((gemm_nt(&a, &c) - &a * c.transpose()).amax() < 1e-12);
        let v: Vec<f64> = (0..7).map(|i| i as f64 - 2.0).collect();
        let r = gemv_tn(&a, &v);
        let want = a.transpose() * nalgebra::DVector::from_vec(v);
        for (x, y) in r.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
