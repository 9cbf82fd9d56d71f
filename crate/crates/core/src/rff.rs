//! Random Fourier feature approximation of the Gaussian kernel.
//!
//! Frequencies are drawn from the kernel's spectral measure, `N(0, σ⁻² I)`.
//! The feature map pairs a cosine and a sine per frequency,
//!
//! ```text
//! z(x) = D^{-1/2} [cos(ω₁ᵀx) … cos(ω_Dᵀx), sin(ω₁ᵀx) … sin(ω_Dᵀx)]
//! ```
//!
//! so `z(x)ᵀz(y) = (1/D) Σ cos(ωᵢᵀ(x − y))` holds as an identity rather than
//! in expectation. Feature vectors therefore have length `2D`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, SpdFactorization};
use crate::linalg::{dot, gemm_nt, gemm_tn};
use crate::samples::SampleSet;

/// Largest feature dimension for which `ZZᵀ + λMI` is formed explicitly
/// under [`SolveRoute::Auto`] when the sample is smaller than the feature
/// space (8192² doubles is 512 MiB).
pub const PRIMAL_FEATURE_LIMIT: usize = 8192;

/// `D` frequency draws `ωᵢ ~ N(0, σ⁻² I_d)`, stored as the rows of a `D × d`
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySample {
    omegas: DMatrix<f64>,
    sigma: f64,
    seed: u64,
}

impl FrequencySample {
    pub fn omegas(&self) -> &DMatrix<f64> {
        &self.omegas
    }

    /// Number of frequency draws `D`.
    pub fn count(&self) -> usize {
        self.omegas.nrows()
    }

    /// Input dimension `d`.
    pub fn dim(&self) -> usize {
        self.omegas.ncols()
    }

    /// Length of a feature vector, `2D`.
    pub fn feature_dim(&self) -> usize {
        2 * self.count()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Builds a sample from explicit frequencies (rows of `omegas`).
    pub fn from_omegas(omegas: DMatrix<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if omegas.nrows() == 0 || omegas.ncols() == 0 {
            return Err(Error::usage("frequency sample must be nonempty"));
        }
        Ok(FrequencySample {
            omegas,
            sigma,
            seed,
        })
    }
}

/// Draws `count` frequencies for a `dim`-dimensional Gaussian kernel of
/// bandwidth `sigma`. Draws fill the matrix row by row, so a sample with
/// more frequencies extends one with fewer under the same seed.
pub fn sample_frequencies(dim: usize, count: usize, sigma: f64, seed: u64) -> Result<FrequencySample> {
    if dim == 0 || count == 0 {
        return Err(Error::usage(format!(
            "sample_frequencies: need d >= 1 and D >= 1, got d={dim}, D={count}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_sigma = 1.0 / sigma;
    let mut omegas = DMatrix::<f64>::zeros(count, dim);
    for i in 0..count {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            omegas[(i, j)] = z * inv_sigma;
        }
    }
    Ok(FrequencySample {
        omegas,
        sigma,
        seed,
    })
}

/// `(1/D) Σ cos(ωᵢᵀ(x − y))`.
pub fn rff_kernel_approx(x: &[f64], y: &[f64], freq: &FrequencySample) -> Result<f64> {
    let d = freq.dim();
    if x.len() != d || y.len() != d {
        return Err(Error::dim_mismatch("rff_kernel_approx", d, x.len().max(y.len())));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let w = &freq.omegas;
    let sum: f64 = (0..freq.count())
        .map(|i| {
            let mut phase = 0.0;
            for (j, dj) in diff.iter().enumerate() {
                phase += w[(i, j)] * dj;
            }
            phase.cos()
        })
        .sum();
    Ok(sum / freq.count() as f64)
}

/// Feature matrix (`2D × P`) for the columns of `points` (`d × P`).
pub fn rff_features(points: &DMatrix<f64>, freq: &FrequencySample) -> Result<DMatrix<f64>> {
    if points.nrows() != freq.dim() {
        return Err(Error::dim_mismatch("rff_features", freq.dim(), points.nrows()));
    }
    let dcount = freq.count();
    let p = points.ncols();
    let mut z = DMatrix::<f64>::zeros(2 * dcount, p);
    if p == 0 {
        return Ok(z);
    }
    let proj = &freq.omegas * points;
    let scale = (1.0 / dcount as f64).sqrt();
    z.as_mut_slice()
        .par_chunks_mut(2 * dcount)
        .zip(proj.as_slice().par_chunks(dcount))
        .for_each(|(col, phases)| {
            let (c, s) = col.split_at_mut(dcount);
            for (i, &ph) in phases.iter().enumerate() {
                let (sn, cs) = ph.sin_cos();
                c[i] = scale * cs;
                s[i] = scale * sn;
            }
        });
    Ok(z)
}

/// Which linear system realizes `(ZZᵀ + λMI)⁻¹ Z`.
///
/// `Primal` factorizes the `2D × 2D` matrix `ZZᵀ + λMI`. `Dual` factorizes
/// `ZᵀZ + λMI` (`M × M`) and uses `(ZZᵀ + λMI)⁻¹ Z = Z (ZᵀZ + λMI)⁻¹`.
/// `Auto` picks `Primal` unless the feature space exceeds both the sample
/// size and [`PRIMAL_FEATURE_LIMIT`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveRoute {
    #[default]
    Auto,
    Primal,
    Dual,
}

impl SolveRoute {
    fn resolve(self, features: usize, samples: usize) -> SolveRoute {
        match self {
            SolveRoute::Auto if features <= samples || features <= PRIMAL_FEATURE_LIMIT => {
                SolveRoute::Primal
            }
            SolveRoute::Auto => SolveRoute::Dual,
            r => r,
        }
    }
}

/// Fitted random-feature embedding.
#[derive(Debug, Clone)]
pub struct RffModel {
    frequencies: FrequencySample,
    z: DMatrix<f64>,
    factorization: SpdFactorization,
    route: SolveRoute,
    train_successors: DMatrix<f64>,
    kernel_config: KernelConfig,
    state_dim: usize,
    input_dim: usize,
}

impl RffModel {
    pub fn frequencies(&self) -> &FrequencySample {
        &self.frequencies
    }

    /// Training features `Z` (`2D × M`).
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn factorization(&self) -> &SpdFactorization {
        &self.factorization
    }

    /// The resolved route, never `Auto`.
    pub fn route(&self) -> SolveRoute {
        self.route
    }

    pub fn train_successors(&self) -> &DMatrix<f64> {
        &self.train_successors
    }

    pub fn kernel_config(&self) -> &KernelConfig {
        &self.kernel_config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sample_size(&self) -> usize {
        self.z.ncols()
    }

    /// Feature-space coefficients `c = (ZZᵀ + λMI)⁻¹ Z y`, so that the
    /// estimate at a query with features `z(q)` is `cᵀ z(q)`.
    pub fn coefficients(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.sample_size() {
            return Err(Error::dim_mismatch("rff coefficients", self.sample_size(), y.len()));
        }
        match self.route {
            SolveRoute::Dual => {
                let w = self.factorization.solve_vec(y)?;
                Ok(&self.z * w)
            }
            _ => self.factorization.solve_vec(&(&self.z * y)),
        }
    }

    /// `cᵀ z(q)` for every column of `queries` (`d × Q`), computing features
    /// in blocks so the full `2D × Q` matrix is never held at once.
    pub fn evaluate(&self, coeffs: &DVector<f64>, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
        const BLOCK: usize = 256;
        if coeffs.len() != self.frequencies.feature_dim() {
            return Err(Error::dim_mismatch(
                "rff evaluate",
                self.frequencies.feature_dim(),
                coeffs.len(),
            ));
        }
        let mut out = Vec::with_capacity(queries.ncols());
        let mut start = 0;
        while start < queries.ncols() {
            let len = BLOCK.min(queries.ncols() - start);
            let block = queries.columns(start, len).into_owned();
            let feats = rff_features(&block, &self.frequencies)?;
            let fd = feats.nrows();
            out.extend(
                feats
                    .as_slice()
                    .chunks_exact(fd)
                    .map(|col| dot(col, coeffs.as_slice())),
            );
            start += len;
        }
        Ok(out)
    }
}

/// Fits the random-feature embedding to a sample.
pub fn rff_fit(
    sample: &SampleSet,
    cfg: &KernelConfig,
    freq: &FrequencySample,
    route: SolveRoute,
) -> Result<RffModel> {
    let pairs = sample.pairs();
    if pairs.nrows() != freq.dim() {
        return Err(Error::dim_mismatch("rff_fit", freq.dim(), pairs.nrows()));
    }
    let m = sample.len();
    let z = rff_features(&pairs, freq)?;
    let route = route.resolve(z.nrows(), m);
    let shift = cfg.lambda() * m as f64;
    let mut a = match route {
        SolveRoute::Dual => gemm_tn(&z, &z),
        _ => gemm_nt(&z, &z),
    };
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    // Symmetrize to the upper triangle; GEMM rounding is not symmetric.
    for j in 0..n {
        for i in 0..j {
            a[(j, i)] = a[(i, j)];
        }
    }
    let factorization = SpdFactorization::from_regularized(a)?;
    Ok(RffModel {
        frequencies: freq.clone(),
        z,
        factorization,
        route,
        train_successors: sample.successors().clone(),
        kernel_config: *cfg,
        state_dim: sample.state_dim(),
        input_dim: sample.input_dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::eval_kernel;
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn frequency_moments() {
        let f = sample_frequencies(1, 1_000_000, 1.0, 11).unwrap();
        let mean = f.omegas().mean();
        assert!(mean.abs() <= 0.005, "mean {mean}");

        let f = sample_frequencies(1, 1_000_000, 0.5, 12).unwrap();
        let mean = f.omegas().mean();
        let var = f.omegas().iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / 1e6;
        assert!((var - 4.0).abs() <= 0.05, "variance {var}");
    }

    #[test]
    fn frequencies_are_seed_deterministic() {
        let a = sample_frequencies(3, 50, 0.2, 9).unwrap();
        let b = sample_frequencies(3, 50, 0.2, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_frequencies(3, 50, 0.2, 10).unwrap();
        assert_ne!(a.omegas(), c.omegas());
        assert!(sample_frequencies(0, 5, 1.0, 0).is_err());
        assert!(sample_frequencies(2, 0, 1.0, 0).is_err());
    }

    #[test]
    fn approx_hand_cases() {
        let f = sample_frequencies(2, 20, 1.0, 1).unwrap();
        assert_eq!(rff_kernel_approx(&[0.3, 0.1], &[0.3, 0.1], &f).unwrap(), 1.0);

        let f = FrequencySample::from_omegas(DMatrix::from_element(2, 1, PI), 1.0, 0).unwrap();
        let v = rff_kernel_approx(&[1.0], &[0.0], &f).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
        assert!(rff_kernel_approx(&[1.0, 2.0], &[0.0], &f).is_err());
    }

    #[test]
    fn approx_converges_to_kernel() {
        let f = sample_frequencies(2, 50_000, 1.0, 3).unwrap();
        let x = [0.2, -0.4];
        let y = [0.2 + 0.6, -0.4 + 0.8];
        let v = rff_kernel_approx(&x, &y, &f).unwrap();
        assert!((v - (-0.5f64).exp()).abs() <= 0.02, "{v}");
    }

    #[test]
    fn features_reproduce_cosine_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = sample_frequencies(3, 200, 0.7, 5).unwrap();
        let pts = DMatrix::from_fn(3, 200, |_, _| rng.random_range(-2.0..2.0));
        let z = rff_features(&pts, &f).unwrap();
        assert_eq!(z.shape(), (400, 200));
        for p in 0..100 {
            let a = z.column(2 * p);
            let b = z.column(2 * p + 1);
            assert!((a.dot(&a) - 1.0).abs() <= 1e-12);
            let xa: Vec<f64> = pts.column(2 * p).iter().copied().collect();
            let xb: Vec<f64> = pts.column(2 * p + 1).iter().copied().collect();
            let want = rff_kernel_approx(&xa, &xb, &f).unwrap();
            assert!((a.dot(&b) - want).abs() <= 1e-12);
        }
        let empty = rff_features(&DMatrix::zeros(3, 0), &f).unwrap();
        assert_eq!(empty.shape(), (400, 0));
        assert!(rff_features(&DMatrix::zeros(2, 1), &f).is_err());
    }

    #[test]
    fn averaging_independent_samples_is_unbiased() {
        // R·D = 10⁶ total draws.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = KernelConfig::new(0.6, 1.0).unwrap();
        let samples: Vec<_> = (0..20)
            .map(|r| sample_frequencies(2, 50_000, 0.6, 100 + r).unwrap())
            .collect();
        for _ in 0..20 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let avg = samples
                .iter()
                .map(|f| rff_kernel_approx(&x, &y, f).unwrap())
                .sum::<f64>()
                / samples.len() as f64;
            assert!((avg - eval_kernel(&x, &y, &cfg).unwrap()).abs() <= 0.01);
        }
    }

    fn toy_sample(m: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(2, m, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(1, m, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(2, m, |_, _| rng.random_range(-1.0..1.0));
        SampleSet::new(x, u, y).unwrap()
    }

    #[test]
    fn scalar_fit() {
        let s = toy_sample(1, 1);
        let cfg = KernelConfig::new(1.0, 0.5).unwrap();
        let f = sample_frequencies(3, 1, 1.0, 2).unwrap();
        let model = rff_fit(&s, &cfg, &f, SolveRoute::Primal).unwrap();
        let z = model.z();
        let l = model.factorization().factor();
        let lhs = (&l * l.transpose())[(0, 0)];
        assert!((lhs - (z[(0, 0)] * z[(0, 0)] + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn fit_reconstructs_system() {
        let s = toy_sample(50, 3);
        let cfg = KernelConfig::new(0.5, 0.01).unwrap();
        let f = sample_frequencies(3, 20, 0.5, 4).unwrap();
        for route in [SolveRoute::Primal, SolveRoute::Dual] {
            let model = rff_fit(&s, &cfg, &f, route).unwrap();
            let z = model.z();
            let mut want = match route {
                SolveRoute::Primal => z * z.transpose(),
                _ => z.transpose() * z,
            };
            for i in 0..want.nrows() {
                want[(i, i)] += 0.01 * 50.0;
            }
            let l = model.factorization().factor();
            assert!((&l * l.transpose() - &want).norm() / want.norm() <= 1e-10);
        }
    }

    #[test]
    fn routes_agree() {
        let s = toy_sample(30, 5);
        let cfg = KernelConfig::new(0.5, 1e-3).unwrap();
        let f = sample_frequencies(3, 40, 0.5, 6).unwrap();
        let p = rff_fit(&s, &cfg, &f, SolveRoute::Primal).unwrap();
        let d = rff_fit(&s, &cfg, &f, SolveRoute::Dual).unwrap();
        assert_eq!(p.route(), SolveRoute::Primal);
        assert_eq!(d.route(), SolveRoute::Dual);
        let y = DVector::from_fn(30, |i, _| (i % 3) as f64 / 2.0);
        let cp = p.coefficients(&y).unwrap();
        let cd = d.coefficients(&y).unwrap();
        assert!((cp - cd).amax() <= 1e-8);
    }

    #[test]
    fn auto_route_resolution() {
        assert_eq!(SolveRoute::Auto.resolve(4000, 500), SolveRoute::Primal);
        assert_eq!(SolveRoute::Auto.resolve(30000, 2500), SolveRoute::Dual);
        assert_eq!(SolveRoute::Auto.resolve(30000, 40000), SolveRoute::Primal);
        assert_eq!(SolveRoute::Dual.resolve(10, 10_000), SolveRoute::Dual);
    }
}
