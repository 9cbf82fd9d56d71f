//! Grid dynamic programming for low-dimensional affine systems.
//!
//! The continuation `C_k(x) = E[V_{k+1}(x')]` is computed at every grid node
//! with Gauss–Hermite tensor quadrature over the Gaussian disturbance.
//! Off-node values `V_{k+1}(y)` use the exact tube indicators at `y` and a
//! multilinear interpolation of `C_{k+1}`. Coordinates beyond the grid are
//! clamped to it, so outside the grid the nearest boundary value is used
//! wherever the tube still contains `y`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::algorithms::{Problem, SafetyField};
use crate::error::{Error, Result};
use crate::systems::{Disturbance, DynamicsModel, Policy};
use crate::tubes::{ReachTube, StateSet};

pub const MAX_ORACLE_DIM: usize = 3;
pub const DEFAULT_QUADRATURE_ORDER: usize = 7;

/// Interpolation coordinates this close to a node snap onto it.
const SNAP: f64 = 1e-9;

/// Regular tensor grid. Node index `i` enumerates coordinates with the
/// first dimension varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points_per_dim: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_dim: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || points_per_dim.len() != n {
            return Err(Error::usage("grid bounds and point counts must share one positive dimension"));
        }
        if points_per_dim.iter().any(|&p| p < 2) {
            return Err(Error::validation("grids need at least 2 points per dimension"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::validation("grid bounds need finite lower < upper"));
        }
        Ok(GridSpec {
            lower,
            upper,
            points_per_dim,
        })
    }

    /// The same bounds and count in every dimension.
    pub fn uniform(dim: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        GridSpec::new(vec![lo; dim], vec![hi; dim], vec![points; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points_per_dim(&self) -> &[usize] {
        &self.points_per_dim
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points_per_dim[axis] - 1) as f64
    }

    fn coordinate(&self, axis: usize, index: usize) -> f64 {
        if index + 1 == self.points_per_dim[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + index as f64 * self.spacing(axis)
        }
    }

    pub fn node(&self, mut index: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|axis| {
                let p = self.points_per_dim[axis];
                let i = index % p;
                index /= p;
                self.coordinate(axis, i)
            })
            .collect()
    }

    /// All nodes, one per column.
    pub fn nodes(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, self.len());
        for j in 0..self.len() {
            out.column_mut(j).copy_from_slice(&self.node(j));
        }
        out
    }

    /// Multilinear interpolation of node values at `y`, with coordinates
    /// clamped to the grid.
    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let n = self.dim();
        let mut base = [0usize; MAX_ORACLE_DIM];
        let mut frac = [0.0f64; MAX_ORACLE_DIM];
        let mut stride = [0usize; MAX_ORACLE_DIM];
        let mut s = 1;
        for axis in 0..n {
            let p = self.points_per_dim[axis];
            let t = ((y[axis] - self.lower[axis]) / self.spacing(axis)).clamp(0.0, (p - 1) as f64);
            let r = t.round();
            let t = if (t - r).abs() <= SNAP { r } else { t };
            let i = (t.floor() as usize).min(p - 2);
            base[axis] = i;
            frac[axis] = t - i as f64;
            stride[axis] = s;
            s *= p;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for axis in 0..n {
                let up = corner >> axis & 1 == 1;
                let f = frac[axis];
                w *= if up { f } else { 1.0 - f };
                idx += (base[axis] + up as usize) * stride[axis];
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }
}

/// Physicists' Gauss–Hermite rule (weight `e^{−t²}`) of the given order,
/// by the Golub–Welsch eigenvalue method. Nodes ascend.
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::usage("quadrature order must be at least 1"));
    }
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Disturbance values and probability weights that integrate polynomials
/// against the disturbance law exactly up to degree `2·order − 1`.
fn disturbance_rule(dist: &Disturbance, order: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    match dist {
        Disturbance::None { dim } => Ok(vec![(vec![0.0; *dim], 1.0)]),
        Disturbance::Gaussian { mean, factor, .. } => {
            let n = mean.len();
            let (t, w) = gauss_hermite(order)?;
            let norm = std::f64::consts::PI.powf(-(n as f64) / 2.0);
            let total = order.pow(n as u32);
            Ok((0..total)
                .map(|mut idx| {
                    let mut xi = vec![0.0; n];
                    let mut weight = norm;
                    for x in xi.iter_mut() {
                        let q = idx % order;
                        idx /= order;
                        *x = std::f64::consts::SQRT_2 * t[q];
                        weight *= w[q];
                    }
                    let value = (0..n)
                        .map(|r| mean[r] + (0..n).map(|c| factor[(r, c)] * xi[c]).sum::<f64>())
                        .collect();
                    (value, weight)
                })
                .collect())
        }
        Disturbance::Beta { .. } => Err(Error::usage("the grid oracle supports Gaussian or no disturbance only")),
    }
}

/// How `E[V_{k+1}(x')]` is integrated at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `BoxGaussian` when every tube set is a box and the disturbance is
    /// absent or Gaussian with diagonal covariance, otherwise Gauss–Hermite
    /// of order [`DEFAULT_QUADRATURE_ORDER`].
    #[default]
    Auto,
    /// Tensor Gauss–Hermite rule with this many points per dimension.
    GaussHermite(usize),
    /// Closed-form expectation of the interpolant over box sets under a
    /// Gaussian with independent coordinates.
    BoxGaussian,
}

impl Quadrature {
    pub fn describe(self) -> String {
        match self {
            Quadrature::Auto => "auto".into(),
            Quadrature::GaussHermite(q) => format!("gauss_hermite({q})"),
            Quadrature::BoxGaussian => "box_gaussian".into(),
        }
    }
}

type Bounds<'a> = (&'a [f64], &'a [f64]);

fn box_bounds(set: &StateSet) -> Option<Bounds<'_>> {
    match set {
        StateSet::Box { lower, upper } => Some((lower, upper)),
        _ => None,
    }
}

/// Per-step box bounds of the target and constraint tubes, if all are boxes.
struct BoxTubes<'a> {
    target: Vec<Bounds<'a>>,
    constraint: Option<Vec<Bounds<'a>>>,
}

impl<'a> BoxTubes<'a> {
    fn extract(problem: &'a Problem) -> Option<Self> {
        let all = |t: &'a ReachTube| t.sets().iter().map(box_bounds).collect::<Option<Vec<_>>>();
        let target = all(problem.target())?;
        let constraint = match problem.constraint() {
            Some(c) => Some(all(c)?),
            None => None,
        };
        Some(BoxTubes { target, constraint })
    }
}

/// Standard deviations of independent Gaussian coordinates, or zeros when
/// there is no disturbance. `None` for correlated or non-Gaussian laws.
fn independent_spread(dist: &Disturbance) -> Option<(Vec<f64>, Vec<f64>)> {
    match dist {
        Disturbance::None { dim } => Some((vec![0.0; *dim], vec![0.0; *dim])),
        Disturbance::Gaussian { mean, covariance, .. } => {
            let n = mean.len();
            for i in 0..n {
                for j in 0..n {
                    if i != j && covariance[(i, j)] != 0.0 {
                        return None;
                    }
                }
            }
            Some((mean.iter().copied().collect(), (0..n).map(|i| covariance[(i, i)].sqrt()).collect()))
        }
        Disturbance::Beta { .. } => None,
    }
}

/// Standard normal mass of `[α, β]`.
fn normal_mass(alpha: f64, beta: f64) -> f64 {
    use std::f64::consts::FRAC_1_SQRT_2;
    if alpha >= 0.0 {
        0.5 * (libm::erfc(alpha * FRAC_1_SQRT_2) - libm::erfc(beta * FRAC_1_SQRT_2))
    } else if beta <= 0.0 {
        0.5 * (libm::erfc(-beta * FRAC_1_SQRT_2) - libm::erfc(-alpha * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * (libm::erfc(-alpha * FRAC_1_SQRT_2) + libm::erfc(beta * FRAC_1_SQRT_2))
    }
}

fn normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// Coordinates beyond this many standard deviations are ignored.
const TAIL: f64 = 9.0;

/// The law of one successor coordinate, `N(mean, sd²)`.
#[derive(Clone, Copy)]
struct AxisLaw {
    mean: f64,
    sd: f64,
}

impl AxisLaw {
    /// `P(lo ≤ y ≤ hi)`.
    fn mass(self, lo: f64, hi: f64) -> f64 {
        if lo > hi {
            0.0
        } else if self.sd == 0.0 {
            f64::from(lo <= self.mean && self.mean <= hi)
        } else {
            normal_mass((lo - self.mean) / self.sd, (hi - self.mean) / self.sd)
        }
    }

    /// `(P(a ≤ y ≤ b), E[(y − c)·1{a ≤ y ≤ b}])` for `sd > 0`.
    fn moments(self, a: f64, b: f64, c: f64) -> (f64, f64) {
        let (alpha, beta) = ((a - self.mean) / self.sd, (b - self.mean) / self.sd);
        let m0 = normal_mass(alpha, beta);
        let m1 = (self.mean - c) * m0 + self.sd * (normal_pdf(alpha) - normal_pdf(beta));
        (m0, m1)
    }
}

impl GridSpec {
    /// Weights `E[1{lo ≤ y ≤ hi}·hatᵢ(y)]` of the axis interpolation basis,
    /// whose outermost functions extend as constants beyond the grid.
    fn axis_weights(&self, axis: usize, law: AxisLaw, lo: f64, hi: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let p = self.points_per_dim[axis];
        let h = self.spacing(axis);
        let first = self.lower[axis];
        let last = self.upper[axis];
        if lo > hi {
            return;
        }
        if law.sd == 0.0 {
            if lo <= law.mean && law.mean <= hi {
                let t = ((law.mean - first) / h).clamp(0.0, (p - 1) as f64);
                let r = t.round();
                let t = if (t - r).abs() <= SNAP { r } else { t };
                let i = (t.floor() as usize).min(p - 2);
                let f = t - i as f64;
                if f < 1.0 {
                    out.push((i, 1.0 - f));
                }
                if f > 0.0 {
                    out.push((i + 1, f));
                }
            }
            return;
        }
        let a = lo.max(law.mean - TAIL * law.sd);
        let b = hi.min(law.mean + TAIL * law.sd);
        if a >= b {
            return;
        }
        let mut push = |i: usize, w: f64| match out.last_mut() {
            Some((j, acc)) if *j == i => *acc += w,
            _ => out.push((i, w)),
        };
        if a < first {
            push(0, law.mass(a, b.min(first)));
        }
        let (ca, cb) = (a.max(first), b.min(last));
        if ca < cb {
            let i0 = (((ca - first) / h).floor() as usize).min(p - 2);
            let i1 = ((((cb - first) / h).ceil() as usize).max(1)).min(p - 1);
            for i in i0..i1 {
                let (yl, yr) = (self.coordinate(axis, i), self.coordinate(axis, i + 1));
                let (sa, sb) = (ca.max(yl), cb.min(yr));
                if sa >= sb {
                    continue;
                }
                let (m0, m1) = law.moments(sa, sb, yl);
                let right = m1 / h;
                push(i, m0 - right);
                push(i + 1, right);
            }
        }
        if b > last {
            push(p - 1, law.mass(a.max(last), b));
        }
    }
}

/// `Σ values[idx]·Πₐ wₐ` over the tensor product of per-axis weights.
fn tensor_sum(values: &[f64], strides: &[usize], weights: &[Vec<(usize, f64)>], axis: usize, offset: usize) -> f64 {
    weights[axis]
        .iter()
        .map(|&(i, w)| {
            let idx = offset + i * strides[axis];
            if axis == 0 {
                w * values[idx]
            } else {
                w * tensor_sum(values, strides, weights, axis - 1, idx)
            }
        })
        .sum()
}

struct BoxGaussianRule<'a> {
    grid: &'a GridSpec,
    tubes: BoxTubes<'a>,
    strides: Vec<usize>,
}

impl<'a> BoxGaussianRule<'a> {
    fn new(grid: &'a GridSpec, tubes: BoxTubes<'a>) -> Self {
        let mut strides = Vec::with_capacity(grid.dim());
        let mut s = 1;
        for &p in &grid.points_per_dim {
            strides.push(s);
            s *= p;
        }
        BoxGaussianRule { grid, tubes, strides }
    }

    fn mass(&self, laws: &[AxisLaw], (lo, hi): Bounds<'_>) -> f64 {
        laws.iter().enumerate().map(|(a, l)| l.mass(lo[a], hi[a])).product()
    }

    /// `E[1_B(y)·interp(values)(y)]` for the box with bounds `lo, hi`.
    fn restricted(&self, laws: &[AxisLaw], lo: &[f64], hi: &[f64], values: &[f64]) -> f64 {
        let n = laws.len();
        let mut weights = vec![Vec::new(); n];
        for a in 0..n {
            self.grid.axis_weights(a, laws[a], lo[a], hi[a], &mut weights[a]);
            if weights[a].is_empty() {
                return 0.0;
            }
        }
        tensor_sum(values, &self.strides, &weights, n - 1, 0)
    }

    /// `E[V_{k}(y)]` where `cont` holds `C_k` at the nodes.
    fn expected_value(&self, problem: &Problem, k: usize, laws: &[AxisLaw], cont: &[f64]) -> f64 {
        let target = self.tubes.target[k];
        if k == problem.horizon() {
            return self.mass(laws, target);
        }
        let v = match &self.tubes.constraint {
            None => self.restricted(laws, target.0, target.1, cont),
            Some(constraint) => {
                let (klo, khi) = constraint[k];
                let lo: Vec<f64> = klo.iter().zip(target.0).map(|(a, b)| a.max(*b)).collect();
                let hi: Vec<f64> = khi.iter().zip(target.1).map(|(a, b)| a.min(*b)).collect();
                self.mass(laws, target) + self.restricted(laws, klo, khi, cont) - self.restricted(laws, &lo, &hi, cont)
            }
        };
        v.clamp(0.0, 1.0)
    }
}

/// Value recursion on `grid`.
pub fn dp_solve(
    model: &DynamicsModel,
    problem: &Problem,
    policy: &Policy,
    grid: &GridSpec,
    quadrature: Quadrature,
) -> Result<SafetyField> {
    let n = model.state_dim();
    if n > MAX_ORACLE_DIM {
        return Err(Error::usage(format!(
            "the grid oracle handles at most {MAX_ORACLE_DIM} state dimensions, got {n}"
        )));
    }
    if !model.system().is_affine() || model.system().block_dim() != n {
        return Err(Error::usage(format!(
            "the grid oracle needs unrepeated affine dynamics, got {}",
            model.system().describe()
        )));
    }
    if grid.dim() != n {
        return Err(Error::dim_mismatch("grid", n, grid.dim()));
    }
    if problem.dim() != n {
        return Err(Error::dim_mismatch("problem tube", n, problem.dim()));
    }
    if policy.input_dim() != model.input_dim() {
        return Err(Error::dim_mismatch("policy", model.input_dim(), policy.input_dim()));
    }
    let horizon = problem.horizon();
    if let Some(h) = policy.horizon() {
        if h < horizon {
            return Err(Error::usage(format!("policy defined for {h} steps, horizon is {horizon}")));
        }
    }
    if matches!(model.disturbance(), Disturbance::Beta { .. }) {
        return Err(Error::usage("the grid oracle supports Gaussian or no disturbance only"));
    }

    let closed_form = match quadrature {
        Quadrature::GaussHermite(_) => None,
        Quadrature::Auto | Quadrature::BoxGaussian => {
            match (BoxTubes::extract(problem), independent_spread(model.disturbance())) {
                (Some(tubes), Some(spread)) => Some((BoxGaussianRule::new(grid, tubes), spread)),
                _ if quadrature == Quadrature::BoxGaussian => {
                    return Err(Error::usage(
                        "box-Gaussian quadrature needs box tube sets and an uncorrelated Gaussian disturbance",
                    ))
                }
                _ => None,
            }
        }
    };
    let order = match quadrature {
        Quadrature::GaussHermite(q) => q,
        _ => DEFAULT_QUADRATURE_ORDER,
    };
    let rule = disturbance_rule(model.disturbance(), order)?;

    let count = grid.len();
    let nodes: Vec<Vec<f64>> = (0..count).map(|j| grid.node(j)).collect();
    let mut values = DMatrix::zeros(horizon + 1, count);
    for (j, x) in nodes.iter().enumerate() {
        values[(horizon, j)] = problem.value_at(horizon, x, || 0.0);
    }
    // C_{k+1} at the nodes; unused while k + 1 = N.
    let mut next_cont = vec![0.0; count];
    for k in (0..horizon).rev() {
        let cont: Vec<f64> = nodes
            .par_iter()
            .map(|x| {
                let u = policy.act(k, x)?;
                if let Some((closed, (mean, sd))) = &closed_form {
                    let centre = model.step(x, &u, mean)?;
                    let laws: Vec<AxisLaw> = centre
                        .iter()
                        .zip(sd)
                        .map(|(&mean, &sd)| AxisLaw { mean, sd })
                        .collect();
                    return Ok(closed.expected_value(problem, k + 1, &laws, &next_cont));
                }
                let mut acc = 0.0;
                for (w, weight) in &rule {
                    let y = model.step(x, &u, w)?;
                    acc += weight * problem.value_at(k + 1, &y, || grid.interpolate(&next_cont, &y));
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        for (j, x) in nodes.iter().enumerate() {
            values[(k, j)] = problem.value_at(k, x, || cont[j]);
        }
        next_cont = cont;
    }
    Ok(SafetyField::new(grid.nodes(), values, problem.kind()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::System;
    use crate::tubes::contains;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn integrator(dist: Disturbance) -> DynamicsModel {
        DynamicsModel::new(System::integrator(2, 0.25).unwrap(), dist).unwrap()
    }

    fn unit_box() -> StateSet {
        StateSet::cube(2, -1.0, 1.0).unwrap()
    }

    fn viability(horizon: usize) -> Problem {
        Problem::terminal_hitting(ReachTube::constant(unit_box(), horizon))
    }

    /// Dyadic node coordinates whose successors under `x₁ + 0.25·x₂` are
    /// again nodes, with no rounding anywhere.
    fn aligned_grid() -> GridSpec {
        GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![33, 9]).unwrap()
    }

    fn brute_force(model: &DynamicsModel, x: &[f64], horizon: usize) -> f64 {
        let mut x = x.to_vec();
        if !contains(&unit_box(), &x).unwrap() {
            return 0.0;
        }
        for _ in 0..horizon {
            x = model.step(&x, &[0.0], &[0.0, 0.0]).unwrap();
            if !contains(&unit_box(), &x).unwrap() {
                return 0.0;
            }
        }
        1.0
    }

    #[test]
    fn hermite_rule_moments() {
        let pi_sqrt = std::f64::consts::PI.sqrt();
        for order in [1, 3, 5, 7, 9, 12] {
            let (t, w) = gauss_hermite(order).unwrap();
            let moment = |p: i32| t.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
            assert!((moment(0) - pi_sqrt).abs() <= 1e-12);
            if order >= 2 {
                assert!((moment(2) - pi_sqrt / 2.0).abs() <= 1e-12);
                assert!(moment(1).abs() <= 1e-12);
            }
            if order >= 3 {
                assert!((moment(4) - 3.0 * pi_sqrt / 4.0).abs() <= 1e-11);
            }
        }
        let (t, _) = gauss_hermite(2).unwrap();
        assert!((t[1] - 0.5f64.sqrt()).abs() <= 1e-14);
        assert!(gauss_hermite(0).is_err());
    }

    #[test]
    fn grid_nodes_and_interpolation() {
        let g = GridSpec::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 5]).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.node(0), vec![0.0, -1.0]);
        assert_eq!(g.node(1), vec![0.5, -1.0]);
        assert_eq!(g.node(3), vec![0.0, -0.5]);
        assert_eq!(g.node(14), vec![1.0, 1.0]);
        // An affine function of the coordinates is reproduced exactly.
        let f = |x: &[f64]| 2.0 * x[0] - 3.0 * x[1] + 0.5;
        let vals: Vec<f64> = (0..15).map(|j| f(&g.node(j))).collect();
        for y in [[0.3, 0.2], [0.0, -1.0], [1.0, 1.0], [0.77, -0.31]] {
            assert!((g.interpolate(&vals, &y) - f(&y)).abs() <= 1e-12);
        }
        // Clamped outside.
        assert!((g.interpolate(&vals, &[2.0, 0.0]) - f(&[1.0, 0.0])).abs() <= 1e-12);
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(GridSpec::new(vec![1.0], vec![1.0], vec![3]).is_err());
    }

    #[test]
    fn deterministic_matches_brute_force() {
        let model = integrator(Disturbance::none(2));
        let grid = aligned_grid();
        for horizon in 0..=3 {
            for quadrature in [Quadrature::Auto, Quadrature::GaussHermite(7)] {
                let field = dp_solve(&model, &viability(horizon), &Policy::zero(1), &grid, quadrature).unwrap();
                for j in 0..grid.len() {
                    let want = brute_force(&model, &grid.node(j), horizon);
                    assert_eq!(field.values()[(0, j)], want, "N={horizon} node {:?}", grid.node(j));
                }
            }
        }
    }

    #[test]
    fn vanishing_noise_recovers_deterministic_values() {
        let grid = aligned_grid();
        let det = dp_solve(&integrator(Disturbance::none(2)), &viability(3), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let tiny = integrator(Disturbance::isotropic(2, 1e-12).unwrap());
        let noisy = dp_solve(&tiny, &viability(3), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let model = integrator(Disturbance::none(2));
        for j in 0..grid.len() {
            // Skip nodes whose trajectory touches the boundary.
            let mut x = grid.node(j);
            let mut margin = f64::INFINITY;
            for _ in 0..=3 {
                margin = margin.min(unit_box().box_boundary_distance(&x).unwrap().abs());
                x = model.step(&x, &[0.0], &[0.0, 0.0]).unwrap();
            }
            if margin > 1e-3 {
                assert!((det.values()[(0, j)] - noisy.values()[(0, j)]).abs() <= 0.01);
            }
        }
    }

    #[test]
    fn horizon_zero_is_the_indicator() {
        let grid = GridSpec::uniform(2, -1.5, 1.5, 13).unwrap();
        let model = integrator(Disturbance::isotropic(2, 0.01).unwrap());
        let field = dp_solve(&model, &viability(0), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        for j in 0..grid.len() {
            let want = if contains(&unit_box(), &grid.node(j)).unwrap() { 1.0 } else { 0.0 };
            assert_eq!(field.values()[(0, j)], want);
        }
    }

    fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn grid_refinement_converges() {
        let model = integrator(Disturbance::isotropic(2, 0.01).unwrap());
        let coarse = GridSpec::uniform(2, -1.0, 1.0, 41).unwrap();
        let fine = GridSpec::uniform(2, -1.0, 1.0, 81).unwrap();
        let a = dp_solve(&model, &viability(5), &Policy::zero(1), &coarse, Quadrature::Auto).unwrap();
        let b = dp_solve(&model, &viability(5), &Policy::zero(1), &fine, Quadrature::Auto).unwrap();
        let shared: Vec<f64> = (0..coarse.len())
            .map(|j| {
                let (i0, i1) = (j % 41, j / 41);
                b.values()[(0, 2 * i0 + 2 * i1 * 81)]
            })
            .collect();
        let err = mean_abs(&a.initial_values(), &shared);
        assert!(err <= 0.02, "grid refinement changed V0 by {err}");
    }

    #[test]
    fn axis_weights_partition_the_mass() {
        let g = GridSpec::uniform(1, -1.0, 1.0, 11).unwrap();
        let mut w = Vec::new();
        for (mean, sd, lo, hi) in [(0.0, 0.1, -1.0, 1.0), (0.95, 0.1, -1.0, 1.0), (1.3, 0.2, -2.0, 2.0), (0.2, 0.05, 0.13, 0.61)] {
            let law = AxisLaw { mean, sd };
            g.axis_weights(0, law, lo, hi, &mut w);
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            assert!((total - law.mass(lo, hi)).abs() <= 1e-12);
            assert!(w.iter().all(|(_, v)| *v >= -1e-15));
            // Hat functions reproduce the identity inside the grid.
            if lo >= -1.0 && hi <= 1.0 {
                let first: f64 = w.iter().map(|&(i, v)| v * g.coordinate(0, i)).sum();
                let (_, m1) = law.moments(lo, hi, 0.0);
                assert!((first - m1).abs() <= 1e-12);
            }
        }
        g.axis_weights(0, AxisLaw { mean: 0.3, sd: 0.0 }, -1.0, 1.0, &mut w);
        assert_eq!(w.len(), 2);
        g.axis_weights(0, AxisLaw { mean: 0.4, sd: 0.0 }, -1.0, 1.0, &mut w);
        assert_eq!(w, vec![(7, 1.0)]);
    }

    #[test]
    fn closed_form_matches_fine_hermite_on_smooth_problem() {
        // A huge tube leaves a smooth integrand, where the Hermite rule is
        // spectrally accurate.
        let model = integrator(Disturbance::isotropic(2, 0.01).unwrap());
        let grid = GridSpec::uniform(2, -1.0, 1.0, 21).unwrap();
        let p = Problem::first_hitting(
            ReachTube::constant(StateSet::cube(2, -1e6, 1e6).unwrap(), 3),
            ReachTube::constant(StateSet::cube(2, -1e6, 1e6).unwrap(), 3),
        )
        .unwrap();
        let a = dp_solve(&model, &p, &Policy::zero(1), &grid, Quadrature::BoxGaussian).unwrap();
        assert!(a.values().iter().all(|&v| v == 1.0));
        let wide = GridSpec::uniform(2, -4.0, 4.0, 161).unwrap();
        let target = Problem::terminal_hitting(ReachTube::constant(StateSet::cube(2, -4.0, 4.0).unwrap(), 2));
        let a = dp_solve(&model, &target, &Policy::zero(1), &wide, Quadrature::BoxGaussian).unwrap();
        let b = dp_solve(&model, &target, &Policy::zero(1), &wide, Quadrature::GaussHermite(9)).unwrap();
        for j in 0..wide.len() {
            let x = wide.node(j);
            if x[0].abs() <= 1.0 && x[1].abs() <= 1.0 {
                assert!((a.values()[(0, j)] - b.values()[(0, j)]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn quadrature_choice() {
        let model = integrator(Disturbance::isotropic(2, 0.01).unwrap());
        let grid = GridSpec::uniform(2, -1.0, 1.0, 21).unwrap();
        let auto = dp_solve(&model, &viability(3), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let closed = dp_solve(&model, &viability(3), &Policy::zero(1), &grid, Quadrature::BoxGaussian).unwrap();
        assert_eq!(auto, closed);
        let correlated = integrator(
            Disturbance::gaussian(nalgebra::DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[0.01, 0.005, 0.005, 0.01]))
                .unwrap(),
        );
        assert!(matches!(
            dp_solve(&correlated, &viability(3), &Policy::zero(1), &grid, Quadrature::BoxGaussian),
            Err(Error::Usage(_))
        ));
        let fallback = dp_solve(&correlated, &viability(3), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let hermite = dp_solve(
            &correlated,
            &viability(3),
            &Policy::zero(1),
            &grid,
            Quadrature::GaussHermite(DEFAULT_QUADRATURE_ORDER),
        )
        .unwrap();
        assert_eq!(fallback, hermite);
    }

    #[test]
    fn agrees_with_monte_carlo() {
        let model = integrator(Disturbance::isotropic(2, 0.01).unwrap());
        let grid = GridSpec::uniform(2, -1.0, 1.0, 81).unwrap();
        let field = dp_solve(&model, &viability(5), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for j in [40 + 40 * 81, 20 + 60 * 81, 70 + 10 * 81, 5 + 40 * 81] {
            let x0 = grid.node(j);
            let runs = 40_000;
            let mut safe = 0;
            for _ in 0..runs {
                let mut x = x0.clone();
                let mut ok = contains(&unit_box(), &x).unwrap();
                for _ in 0..5 {
                    if !ok {
                        break;
                    }
                    x = model.sample_step(&x, &[0.0], &mut rng).unwrap();
                    ok = contains(&unit_box(), &x).unwrap();
                }
                safe += ok as usize;
            }
            let mc = safe as f64 / runs as f64;
            let dp = field.values()[(0, j)];
            assert!((mc - dp).abs() <= 0.01, "{x0:?}: dp {dp} vs mc {mc}");
        }
    }

    #[test]
    fn monotone_in_tube_inclusion_and_in_range() {
        let model = integrator(Disturbance::isotropic(2, 0.02).unwrap());
        let grid = GridSpec::uniform(2, -1.2, 1.2, 31).unwrap();
        let small = Problem::first_hitting(
            ReachTube::constant(StateSet::cube(2, -0.8, 0.8).unwrap(), 4),
            ReachTube::constant(StateSet::cube(2, -0.1, 0.1).unwrap(), 4),
        )
        .unwrap();
        let big = Problem::first_hitting(
            ReachTube::constant(StateSet::cube(2, -0.8, 0.8).unwrap(), 4),
            ReachTube::constant(StateSet::cube(2, -0.3, 0.3).unwrap(), 4),
        )
        .unwrap();
        let a = dp_solve(&model, &small, &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let b = dp_solve(&model, &big, &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert!((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y));
            assert!(*y >= *x - 1e-12);
        }
        let tight = dp_solve(&model, &viability(4), &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        let loose = Problem::terminal_hitting(ReachTube::constant(StateSet::cube(2, -1.1, 1.1).unwrap(), 4));
        let loose = dp_solve(&model, &loose, &Policy::zero(1), &grid, Quadrature::Auto).unwrap();
        for (x, y) in tight.values().iter().zip(loose.values().iter()) {
            assert!(*y >= *x - 1e-12);
        }
    }

    #[test]
    fn unsupported_requests() {
        let grid = GridSpec::uniform(4, -1.0, 1.0, 3).unwrap();
        let four = DynamicsModel::new(System::integrator(4, 0.25).unwrap(), Disturbance::none(4)).unwrap();
        let p = Problem::terminal_hitting(ReachTube::constant(StateSet::cube(4, -1.0, 1.0).unwrap(), 1));
        assert!(matches!(dp_solve(&four, &p, &Policy::zero(1), &grid, Quadrature::Auto), Err(Error::Usage(_))));
        let beta = integrator(Disturbance::beta_default(2));
        let g2 = GridSpec::uniform(2, -1.0, 1.0, 5).unwrap();
        assert!(matches!(dp_solve(&beta, &viability(1), &Policy::zero(1), &g2, Quadrature::Auto), Err(Error::Usage(_))));
    }
}
