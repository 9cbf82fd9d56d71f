//! Backward value recursions driven by an embedding estimate of the
//! transition law.
//!
//! Both solvers share one recursion. At step `k` the values at the training
//! successors, `y = V_{k+1}(x'ᵢ)`, are turned into coefficients, and the
//! estimate of `E[V_{k+1}(x') | q, π_k(q)]` at a query `q` is a linear
//! functional of those coefficients. The estimate is clamped to `[0, 1]`
//! before the tube indicators are applied.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{cross_gram, gram, factorize_regularized, KernelConfig, SpdFactorization};
use crate::linalg::gemv_tn;
use crate::rff::{rff_features, RffModel};
use crate::samples::{stack_rows, SampleSet};
use crate::systems::Policy;
use crate::tubes::{ReachTube, StateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    FirstHitting,
    TerminalHitting,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::FirstHitting => "first_hitting",
            ProblemKind::TerminalHitting => "terminal_hitting",
        }
    }
}

/// A reachability problem over a horizon `N`.
#[derive(Debug, Clone)]
pub struct Problem {
    kind: ProblemKind,
    target: ReachTube,
    constraint: Option<ReachTube>,
}

impl Problem {
    /// Reach `T` at some `j ≤ N` while staying in `K` before `j`.
    pub fn first_hitting(constraint: ReachTube, target: ReachTube) -> Result<Self> {
        if constraint.horizon() != target.horizon() {
            return Err(Error::usage(format!(
                "constraint horizon {} differs from target horizon {}",
                constraint.horizon(),
                target.horizon()
            )));
        }
        if constraint.dim() != target.dim() {
            return Err(Error::dim_mismatch("constraint tube", target.dim(), constraint.dim()));
        }
        Ok(Problem {
            kind: ProblemKind::FirstHitting,
            target,
            constraint: Some(constraint),
        })
    }

    /// Stay in `T_k` for every `k ≤ N`.
    pub fn terminal_hitting(target: ReachTube) -> Self {
        Problem {
            kind: ProblemKind::TerminalHitting,
            target,
            constraint: None,
        }
    }

    /// Terminal hitting with `T_k = safe` for `k < N` and `T_N = target`.
    pub fn reach_avoid(safe: StateSet, target: StateSet, horizon: usize) -> Result<Self> {
        Ok(Problem::terminal_hitting(ReachTube::reach_avoid(safe, target, horizon)?))
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn horizon(&self) -> usize {
        self.target.horizon()
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn target(&self) -> &ReachTube {
        &self.target
    }

    pub fn constraint(&self) -> Option<&ReachTube> {
        self.constraint.as_ref()
    }

    /// `V_k(x)` given the continuation estimate at `x`, which is only
    /// consulted where the indicators leave it undetermined.
    pub(crate) fn value_at(&self, k: usize, x: &[f64], continuation: impl FnOnce() -> f64) -> f64 {
        let in_target = self.target.sets()[k].contains_unchecked(x);
        if k == self.horizon() {
            return if in_target { 1.0 } else { 0.0 };
        }
        match self.kind {
            ProblemKind::FirstHitting => {
                let constraint = self.constraint.as_ref().expect("first hitting has a constraint");
                if in_target {
                    1.0
                } else if constraint.sets()[k].contains_unchecked(x) {
                    continuation().clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
            ProblemKind::TerminalHitting => {
                if in_target {
                    continuation().clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Estimated safety probabilities at a set of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyField {
    points: DMatrix<f64>,
    values: DMatrix<f64>,
    kind: ProblemKind,
}

impl SafetyField {
    pub(crate) fn new(points: DMatrix<f64>, values: DMatrix<f64>, kind: ProblemKind) -> Self {
        debug_assert_eq!(points.ncols(), values.ncols());
        SafetyField { points, values, kind }
    }

    /// Evaluation points, one per column.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// `(N + 1) × P`; row `k` holds `V_k` at every point.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn horizon(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `V₀` at every point.
    pub fn initial_values(&self) -> Vec<f64> {
        self.values.row(0).iter().copied().collect()
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.points.column(index).iter().copied().collect()
    }
}

/// `V₀` at evaluation point `index`.
pub fn safety_at(field: &SafetyField, index: usize) -> Result<f64> {
    if index >= field.len() {
        return Err(Error::usage(format!(
            "point index {index} out of range for {} points",
            field.len()
        )));
    }
    Ok(field.values[(0, index)])
}

/// Exact kernel embedding: training pairs plus the factorization of
/// `G + λMI`.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    kernel_config: KernelConfig,
    train_pairs: DMatrix<f64>,
    train_successors: DMatrix<f64>,
    factorization: SpdFactorization,
    state_dim: usize,
    input_dim: usize,
}

impl EmbeddingModel {
    pub fn kernel_config(&self) -> &KernelConfig {
        &self.kernel_config
    }

    /// `(n + m) × M`.
    pub fn train_pairs(&self) -> &DMatrix<f64> {
        &self.train_pairs
    }

    /// `n × M`.
    pub fn train_successors(&self) -> &DMatrix<f64> {
        &self.train_successors
    }

    pub fn factorization(&self) -> &SpdFactorization {
        &self.factorization
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sample_size(&self) -> usize {
        self.train_pairs.ncols()
    }

    /// `β = (G + λMI)⁻¹ y`.
    pub fn weights(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.factorization.solve_vec(y)
    }

    /// `βᵀ Ψ(q)` for every column `q` of `query_pairs`.
    pub fn estimate(&self, weights: &DVector<f64>, query_pairs: &DMatrix<f64>) -> Result<Vec<f64>> {
        let k = cross_gram(&self.train_pairs, query_pairs, &self.kernel_config)?;
        Ok(gemv_tn(&k, weights.as_slice()))
    }
}

/// Assembles the Gram matrix over the sample's `(xᵢ, uᵢ)` pairs and
/// factorizes `G + λMI` once.
pub fn fit(sample: &SampleSet, cfg: &KernelConfig) -> Result<EmbeddingModel> {
    let pairs = sample.pairs();
    let g = gram(&pairs, cfg)?;
    let factorization = factorize_regularized(&g, cfg.lambda())?;
    Ok(EmbeddingModel {
        kernel_config: *cfg,
        train_pairs: pairs,
        train_successors: sample.successors().clone(),
        factorization,
        state_dim: sample.state_dim(),
        input_dim: sample.input_dim(),
    })
}

/// Largest query feature block kept across recursion steps (entries).
const FEATURE_CACHE_ENTRIES: usize = 1 << 25;

/// What the shared recursion needs from an embedding.
trait Estimator: Sync {
    /// Query-side data reusable while the policy stays the same.
    type Prepared;

    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn train_successors(&self) -> &DMatrix<f64>;
    fn prepare(&self, query_pairs: DMatrix<f64>) -> Result<Self::Prepared>;
    fn coefficients(&self, y: &DVector<f64>) -> Result<DVector<f64>>;
    fn evaluate(&self, coeffs: &DVector<f64>, prepared: &Self::Prepared) -> Result<Vec<f64>>;
}

impl Estimator for EmbeddingModel {
    /// Cross-Gram `M × Q`.
    type Prepared = DMatrix<f64>;

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn train_successors(&self) -> &DMatrix<f64> {
        &self.train_successors
    }

    fn prepare(&self, query_pairs: DMatrix<f64>) -> Result<DMatrix<f64>> {
        cross_gram(&self.train_pairs, &query_pairs, &self.kernel_config)
    }

    fn coefficients(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.weights(y)
    }

    fn evaluate(&self, coeffs: &DVector<f64>, prepared: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(gemv_tn(prepared, coeffs.as_slice()))
    }
}

enum RffQueries {
    Features(DMatrix<f64>),
    Pairs(DMatrix<f64>),
}

impl Estimator for RffModel {
    type Prepared = RffQueries;

    fn state_dim(&self) -> usize {
        RffModel::state_dim(self)
    }

    fn input_dim(&self) -> usize {
        RffModel::input_dim(self)
    }

    fn train_successors(&self) -> &DMatrix<f64> {
        RffModel::train_successors(self)
    }

    fn prepare(&self, query_pairs: DMatrix<f64>) -> Result<RffQueries> {
        if self.frequencies().feature_dim() * query_pairs.ncols() <= FEATURE_CACHE_ENTRIES {
            Ok(RffQueries::Features(rff_features(&query_pairs, self.frequencies())?))
        } else {
            Ok(RffQueries::Pairs(query_pairs))
        }
    }

    fn coefficients(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        RffModel::coefficients(self, y)
    }

    fn evaluate(&self, coeffs: &DVector<f64>, prepared: &RffQueries) -> Result<Vec<f64>> {
        match prepared {
            RffQueries::Features(z) => Ok(gemv_tn(z, coeffs.as_slice())),
            RffQueries::Pairs(p) => RffModel::evaluate(self, coeffs, p),
        }
    }
}

/// Backward recursion with exact kernel embeddings.
pub fn solve_exact(
    model: &EmbeddingModel,
    problem: &Problem,
    policy: &Policy,
    eval_points: &DMatrix<f64>,
) -> Result<SafetyField> {
    recursion(model, problem, policy, eval_points)
}

/// Backward recursion with the random-feature embedding.
pub fn solve_rff(
    model: &RffModel,
    problem: &Problem,
    policy: &Policy,
    eval_points: &DMatrix<f64>,
) -> Result<SafetyField> {
    recursion(model, problem, policy, eval_points)
}

/// `(q, π_k(q))` for every column of `states`.
fn policy_pairs(policy: &Policy, k: usize, states: &DMatrix<f64>, input_dim: usize) -> Result<DMatrix<f64>> {
    let n = states.nrows();
    let inputs: Vec<Vec<f64>> = states
        .as_slice()
        .par_chunks(n)
        .map(|x| policy.act(k, x))
        .collect::<Result<_>>()?;
    let mut u = DMatrix::zeros(input_dim, states.ncols());
    for (j, v) in inputs.iter().enumerate() {
        if v.len() != input_dim {
            return Err(Error::dim_mismatch("policy output", input_dim, v.len()));
        }
        u.column_mut(j).copy_from_slice(v);
    }
    Ok(stack_rows(states, &u))
}

fn recursion<E: Estimator>(
    est: &E,
    problem: &Problem,
    policy: &Policy,
    eval_points: &DMatrix<f64>,
) -> Result<SafetyField> {
    let n = est.state_dim();
    let horizon = problem.horizon();
    if problem.dim() != n {
        return Err(Error::dim_mismatch("problem tube", n, problem.dim()));
    }
    if eval_points.nrows() != n {
        return Err(Error::dim_mismatch("evaluation points", n, eval_points.nrows()));
    }
    if policy.input_dim() != est.input_dim() {
        return Err(Error::dim_mismatch("policy", est.input_dim(), policy.input_dim()));
    }
    if let Some(h) = policy.horizon() {
        if h < horizon {
            return Err(Error::usage(format!(
                "policy defined for {h} steps, horizon is {horizon}"
            )));
        }
    }

    let successors = est.train_successors();
    let m = successors.ncols();
    let p = eval_points.ncols();
    let column = |mat: &DMatrix<f64>, j: usize| -> Vec<f64> { mat.column(j).iter().copied().collect() };

    let mut values = DMatrix::zeros(horizon + 1, p);
    for j in 0..p {
        values[(horizon, j)] = problem.value_at(horizon, &column(eval_points, j), || 0.0);
    }
    let mut y = DVector::from_fn(m, |i, _| problem.value_at(horizon, &column(successors, i), || 0.0));
    if horizon == 0 {
        return Ok(SafetyField::new(eval_points.clone(), values, problem.kind()));
    }

    // Query columns are the successors followed by the evaluation points;
    // at k = 0 only the evaluation points are needed.
    let all_queries = {
        let mut q = DMatrix::zeros(n, m + p);
        q.columns_mut(0, m).copy_from(successors);
        q.columns_mut(m, p).copy_from(eval_points);
        q
    };
    let invariant = policy.is_time_invariant();
    let mut cached: Option<E::Prepared> = None;

    for k in (0..horizon).rev() {
        let coeffs = est.coefficients(&y)?;
        let with_successors = k > 0;
        let raw = if invariant && with_successors {
            if cached.is_none() {
                cached = Some(est.prepare(policy_pairs(policy, k, &all_queries, est.input_dim())?)?);
            }
            est.evaluate(&coeffs, cached.as_ref().unwrap())?
        } else if invariant {
            match &cached {
                Some(prep) => est.evaluate(&coeffs, prep)?[m..].to_vec(),
                None => {
                    let prep = est.prepare(policy_pairs(policy, k, eval_points, est.input_dim())?)?;
                    est.evaluate(&coeffs, &prep)?
                }
            }
        } else {
            let queries = if with_successors { &all_queries } else { eval_points };
            let prep = est.prepare(policy_pairs(policy, k, queries, est.input_dim())?)?;
            est.evaluate(&coeffs, &prep)?
        };
        let offset = if with_successors { m } else { 0 };
        for j in 0..p {
            values[(k, j)] = problem.value_at(k, &column(eval_points, j), || raw[offset + j]);
        }
        if with_successors {
            y = DVector::from_fn(m, |i, _| problem.value_at(k, &column(successors, i), || raw[i]));
        }
    }
    Ok(SafetyField::new(eval_points.clone(), values, problem.kind()))
}
