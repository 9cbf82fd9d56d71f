use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Additive disturbance acting on one state block.
#[derive(Debug, Clone)]
pub enum Disturbance {
    None {
        dim: usize,
    },
    Gaussian {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        /// `L` with `L·Lᵀ = Σ`; draws are `μ + L·ξ`, `ξ ~ N(0, I)`.
        factor: DMatrix<f64>,
    },
    /// Per-coordinate `shift + scale · Beta(α, β)`.
    Beta {
        alpha: f64,
        beta: f64,
        shift: Vec<f64>,
        scale: Vec<f64>,
        dist: Beta<f64>,
    },
}

impl Disturbance {
    pub fn none(dim: usize) -> Self {
        Disturbance::None { dim }
    }

    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::usage(format!(
                "covariance must be {n}x{n}, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if covariance.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::usage("non-finite disturbance parameters"));
        }
        for i in 0..n {
            for j in 0..i {
                if covariance[(i, j)] != covariance[(j, i)] {
                    return Err(Error::usage("covariance is not symmetric"));
                }
            }
        }
        let factor = psd_factor(&covariance)?;
        Ok(Disturbance::Gaussian {
            mean,
            covariance,
            factor,
        })
    }

    /// Isotropic zero-mean Gaussian `N(0, variance · I)`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::gaussian(DVector::zeros(dim), DMatrix::identity(dim, dim) * variance)
    }

    pub fn beta(alpha: f64, beta: f64, shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() || shift.is_empty() {
            return Err(Error::usage("beta disturbance needs matching nonempty shift/scale"));
        }
        let dist = Beta::new(alpha, beta)
            .map_err(|e| Error::usage(format!("invalid beta parameters ({alpha}, {beta}): {e}")))?;
        Ok(Disturbance::Beta {
            alpha,
            beta,
            shift,
            scale,
            dist,
        })
    }

    /// `Beta(2, 2)` shifted by `−0.5`: symmetric, zero mean, support `[−0.5, 0.5]`.
    pub fn beta_default(dim: usize) -> Self {
        Self::beta(2.0, 2.0, vec![-0.5; dim], vec![1.0; dim]).expect("valid default parameters")
    }

    pub fn dim(&self) -> usize {
        match self {
            Disturbance::None { dim } => *dim,
            Disturbance::Gaussian { mean, .. } => mean.len(),
            Disturbance::Beta { shift, .. } => shift.len(),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Disturbance::None { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            Disturbance::None { .. } => "none".to_string(),
            Disturbance::Gaussian { mean, covariance, .. } => {
                format!("gaussian(mean={:?}, cov={:?})", mean.as_slice(), covariance.as_slice())
            }
            Disturbance::Beta {
                alpha,
                beta,
                shift,
                scale,
                ..
            } => format!("beta(alpha={alpha}, beta={beta}, shift={shift:?}, scale={scale:?})"),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Disturbance::None { dim } => vec![0.0; *dim],
            Disturbance::Gaussian { mean, factor, .. } => {
                let xi = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
                (mean + factor * xi).as_slice().to_vec()
            }
            Disturbance::Beta {
                shift, scale, dist, ..
            } => shift
                .iter()
                .zip(scale)
                .map(|(s, c)| s + c * dist.sample(rng))
                .collect(),
        }
    }
}

/// One realization of `d`, checking that it acts on `dim` coordinates.
pub fn draw_disturbance<R: Rng + ?Sized>(d: &Disturbance, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d.dim() != dim {
        return Err(Error::dim_mismatch("draw_disturbance", d.dim(), dim));
    }
    Ok(d.draw(rng))
}

/// Factor of a symmetric PSD matrix: Cholesky when positive definite,
/// otherwise `V·√Λ` from the eigendecomposition.
fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::usage("covariance is not positive semidefinite"));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}
