//! Gaussian kernel evaluation, Gram assembly and the regularized SPD solve.
//!
//! Point sets are stored column-wise: a `d × M` matrix holds `M` points of
//! dimension `d`, one per column. Columns are contiguous in nalgebra's
//! column-major layout, which is what every kernel evaluation walks over.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::gemm_tn;

/// Bandwidth and regularization of the Gaussian kernel embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    sigma: f64,
    lambda: f64,
}

impl KernelConfig {
    pub fn new(sigma: f64, lambda: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::validation(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(KernelConfig { sigma, lambda })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub(crate) fn neg_inv_two_sigma_sq(&self) -> f64 {
        -0.5 / (self.sigma * self.sigma)
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma: 0.1,
            lambda: 1.0,
        }
    }
}

/// Squared Euclidean distance. Four partial sums let the loop vectorize.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..4 {
            let d = ca[l] - cb[l];
            acc[l] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn gaussian(a: &[f64], b: &[f64], scale: f64) -> f64 {
    (scale * sq_dist(a, b)).exp()
}

/// `exp(-‖x − y‖² / 2σ²)`.
pub fn eval_kernel(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim_mismatch("eval_kernel", x.len(), y.len()));
    }
    Ok(gaussian(x, y, cfg.neg_inv_two_sigma_sq()))
}

/// Above this point dimension squared distances come from
/// `‖a‖² + ‖b‖² − 2aᵀb` with one matrix product.
const GEMM_DIM_THRESHOLD: usize = 64;

fn gaussian_via_gemm(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let norms = |p: &DMatrix<f64>| p.column_iter().map(|c| c.norm_squared()).collect::<Vec<_>>();
    let (na, nb) = (norms(a), norms(b));
    let mut out = gemm_tn(a, b);
    let m = out.nrows();
    out.as_mut_slice()
        .par_chunks_mut(m)
        .zip(nb.par_iter())
        .for_each(|(col, &nj)| {
            for (v, &ni) in col.iter_mut().zip(&na) {
                *v = (scale * (ni + nj - 2.0 * *v).max(0.0)).exp();
            }
        });
    out
}

/// Symmetric Gram matrix `G[i][j] = k(p_i, p_j)` over the columns of a
/// point matrix.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    kernel_config: KernelConfig,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kernel_config(&self) -> &KernelConfig {
        &self.kernel_config
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Wraps an arbitrary symmetric matrix, e.g. an approximate Gram matrix
    /// built from random features.
    pub fn from_entries(entries: DMatrix<f64>, kernel_config: KernelConfig) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::usage(format!(
                "Gram matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(GramMatrix {
            entries,
            kernel_config,
        })
    }
}

/// Gram matrix over `points` (`d × M`, one point per column).
///
/// Only the upper triangle is evaluated; the lower triangle is a mirror, so
/// the result is bit-exactly symmetric.
pub fn gram(points: &DMatrix<f64>, cfg: &KernelConfig) -> Result<GramMatrix> {
    let m = points.ncols();
    if m == 0 {
        return Err(Error::usage("gram: empty point list"));
    }
    let d = points.nrows();
    let scale = cfg.neg_inv_two_sigma_sq();
    if d >= GEMM_DIM_THRESHOLD {
        let mut entries = gaussian_via_gemm(points, points, scale);
        for j in 0..m {
            entries[(j, j)] = 1.0;
            for i in 0..j {
                entries[(j, i)] = entries[(i, j)];
            }
        }
        return Ok(GramMatrix {
            entries,
            kernel_config: *cfg,
        });
    }
    let data = points.as_slice();
    let mut entries = DMatrix::<f64>::zeros(m, m);
    entries
        .as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(j, col)| {
            let pj = &data[j * d..(j + 1) * d];
            for (i, out) in col.iter_mut().enumerate().take(j) {
                *out = gaussian(&data[i * d..(i + 1) * d], pj, scale);
            }
            col[j] = 1.0;
        });
    for j in 0..m {
        for i in 0..j {
            entries[(j, i)] = entries[(i, j)];
        }
    }
    Ok(GramMatrix {
        entries,
        kernel_config: *cfg,
    })
}

/// Cross-Gram matrix `C[i][p] = k(train_i, eval_p)`; column `p` is the
/// feature vector of `eval_p` against the training set.
pub fn cross_gram(
    train: &DMatrix<f64>,
    eval: &DMatrix<f64>,
    cfg: &KernelConfig,
) -> Result<DMatrix<f64>> {
    if train.nrows() != eval.nrows() {
        return Err(Error::dim_mismatch("cross_gram", train.nrows(), eval.nrows()));
    }
    let d = train.nrows();
    let m = train.ncols();
    let scale = cfg.neg_inv_two_sigma_sq();
    let tdata = train.as_slice();
    if m > 0 && eval.ncols() > 0 && d >= GEMM_DIM_THRESHOLD {
        return Ok(gaussian_via_gemm(train, eval, scale));
    }
    let mut out = DMatrix::<f64>::zeros(m, eval.ncols());
    if m == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(m)
        .zip(eval.as_slice().par_chunks(d.max(1)))
        .for_each(|(col, q)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = gaussian(&tdata[i * d..(i + 1) * d], q, scale);
            }
        });
    Ok(out)
}

/// Cholesky factorization of `G + λ·M·I`.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    cholesky: Cholesky<f64, Dyn>,
    m: usize,
}

impl SpdFactorization {
    /// Factorizes an already-regularized symmetric matrix.
    pub(crate) fn from_regularized(a: DMatrix<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::computation("non-finite entries in regularized matrix"));
        }
        let m = a.nrows();
        let cholesky = Cholesky::new(a)
            .ok_or_else(|| Error::computation("regularized matrix is not positive definite"))?;
        Ok(SpdFactorization { cholesky, m })
    }

    /// Lower-triangular factor `L` with `L·Lᵀ = G + λMI`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.cholesky.l()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.m {
            return Err(Error::dim_mismatch("solve", self.m, rhs.len()));
        }
        Ok(self.cholesky.solve(rhs))
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.m {
            return Err(Error::dim_mismatch("solve", self.m, rhs.nrows()));
        }
        Ok(self.cholesky.solve(rhs))
    }
}

/// Factorizes `G + λ·M·I` where `M` is the Gram dimension.
pub fn factorize_regularized(g: &GramMatrix, lambda: f64) -> Result<SpdFactorization> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation(format!("lambda must be positive, got {lambda}")));
    }
    let m = g.dim();
    let mut a = g.entries.clone();
    let shift = lambda * m as f64;
    for i in 0..m {
        a[(i, i)] += shift;
    }
    SpdFactorization::from_regularized(a)
}
