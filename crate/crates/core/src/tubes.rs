//! State sets and time-indexed reachability tubes.
//!
//! Every set is closed: boxes and half-spaces use `≤`, so boundary points are
//! members. Tubes must consist of nonempty sets; this is the caller's
//! obligation and is not checked (polytope emptiness is a feasibility problem).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type IndicatorFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum StateSet {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `{x : A·x ≤ b}`.
    Polytope {
        a: DMatrix<f64>,
        b: DVector<f64>,
    },
    /// A user-supplied membership function. It must be pure.
    Indicator {
        name: String,
        dim: usize,
        f: IndicatorFn,
    },
}

impl fmt::Debug for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSet::Box { lower, upper } => f
                .debug_struct("Box")
                .field("lower", lower)
                .field("upper", upper)
                .finish(),
            StateSet::Polytope { a, b } => f
                .debug_struct("Polytope")
                .field("a", &a.as_slice())
                .field("b", &b.as_slice())
                .finish(),
            StateSet::Indicator { name, dim, .. } => f
                .debug_struct("Indicator")
                .field("name", name)
                .field("dim", dim)
                .finish(),
        }
    }
}

impl StateSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::usage("box bounds must be nonempty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::validation(format!(
                "box lower bound exceeds upper bound: {lower:?} vs {upper:?}"
            )));
        }
        Ok(StateSet::Box { lower, upper })
    }

    /// Axis-aligned box `[lo, hi]ⁿ`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo; dim], vec![hi; dim])
    }

    pub fn polytope(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || a.ncols() == 0 {
            return Err(Error::usage(format!(
                "polytope needs A with one row per entry of b, got {}x{} and {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        Ok(StateSet::Polytope { a, b })
    }

    pub fn indicator(
        name: impl Into<String>,
        dim: usize,
        f: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        StateSet::Indicator {
            name: name.into(),
            dim,
            f: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StateSet::Box { lower, .. } => lower.len(),
            StateSet::Polytope { a, .. } => a.ncols(),
            StateSet::Indicator { dim, .. } => *dim,
        }
    }

    /// Membership without the dimension check.
    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        match self {
            StateSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u),
            StateSet::Polytope { a, b } => (0..a.nrows()).all(|i| {
                let mut s = 0.0;
                for (j, v) in x.iter().enumerate() {
                    s += a[(i, j)] * v;
                }
                s <= b[i]
            }),
            StateSet::Indicator { f, .. } => f(x),
        }
    }

    /// Euclidean distance from `x` to the boundary of a box; `None` for
    /// other set kinds.
    pub fn box_boundary_distance(&self, x: &[f64]) -> Option<f64> {
        match self {
            StateSet::Box { lower, upper } => {
                let inside = self.contains_unchecked(x);
                if inside {
                    Some(
                        x.iter()
                            .zip(lower.iter().zip(upper))
                            .map(|(v, (l, u))| (v - l).min(u - v))
                            .fold(f64::INFINITY, f64::min),
                    )
                } else {
                    let d2: f64 = x
                        .iter()
                        .zip(lower.iter().zip(upper))
                        .map(|(v, (l, u))| {
                            let e = (l - v).max(0.0).max(v - u);
                            e * e
                        })
                        .sum();
                    Some(d2.sqrt())
                }
            }
            _ => None,
        }
    }
}

/// Exact membership test.
pub fn contains(s: &StateSet, x: &[f64]) -> Result<bool> {
    if x.len() != s.dim() {
        return Err(Error::dim_mismatch("contains", s.dim(), x.len()));
    }
    Ok(s.contains_unchecked(x))
}

/// Sets `A₀, …, A_N` for a horizon `N`.
#[derive(Debug, Clone)]
pub struct ReachTube {
    sets: Vec<StateSet>,
}

impl ReachTube {
    pub fn new(sets: Vec<StateSet>) -> Result<Self> {
        let Some(first) = sets.first() else {
            return Err(Error::usage("a tube needs at least one set"));
        };
        let d = first.dim();
        if let Some(bad) = sets.iter().position(|s| s.dim() != d) {
            return Err(Error::usage(format!(
                "tube set {bad} has dimension {}, expected {d}",
                sets[bad].dim()
            )));
        }
        Ok(ReachTube { sets })
    }

    /// The same set at every time step (a viability tube).
    pub fn constant(set: StateSet, horizon: usize) -> Self {
        ReachTube {
            sets: vec![set; horizon + 1],
        }
    }

    /// `safe` for `k < N`, `target` at `k = N`.
    pub fn reach_avoid(safe: StateSet, target: StateSet, horizon: usize) -> Result<Self> {
        let mut sets = vec![safe; horizon];
        sets.push(target);
        ReachTube::new(sets)
    }

    pub fn horizon(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.sets[0].dim()
    }

    pub fn sets(&self) -> &[StateSet] {
        &self.sets
    }

    pub fn set(&self, k: usize) -> Result<&StateSet> {
        self.sets.get(k).ok_or_else(|| {
            Error::usage(format!("time index {k} outside tube horizon {}", self.horizon()))
        })
    }
}

/// `1_{A_k}(x)` as `0.0` or `1.0`.
pub fn indicator_k(tube: &ReachTube, k: usize, x: &[f64]) -> Result<f64> {
    Ok(if contains(tube.set(k)?, x)? { 1.0 } else { 0.0 })
}

/// `1_{K_k \ T_k}(x)`.
pub fn safe_excluding_target(
    constraint: &ReachTube,
    target: &ReachTube,
    k: usize,
    x: &[f64],
) -> Result<f64> {
    if constraint.horizon() != target.horizon() {
        return Err(Error::usage(format!(
            "constraint horizon {} differs from target horizon {}",
            constraint.horizon(),
            target.horizon()
        )));
    }
    Ok(indicator_k(constraint, k, x)? * (1.0 - indicator_k(target, k, x)?))
}
