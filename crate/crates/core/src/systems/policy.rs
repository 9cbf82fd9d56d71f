use std::sync::Arc;

use super::mlp::{mlp_forward, Mlp};
use crate::error::{Error, Result};

/// A Markov policy `π = (π₀, …, π_{N−1})`.
#[derive(Debug, Clone)]
pub enum Policy {
    Zero { input_dim: usize },
    Constant(Vec<f64>),
    /// `steps[k]` is used at time `k`.
    TimeVarying(Vec<Policy>),
    Mlp(Arc<Mlp>),
}

impl Policy {
    pub fn zero(input_dim: usize) -> Self {
        Policy::Zero { input_dim }
    }

    pub fn mlp(net: Mlp) -> Self {
        Policy::Mlp(Arc::new(net))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Policy::Zero { input_dim } => *input_dim,
            Policy::Constant(u) => u.len(),
            Policy::TimeVarying(steps) => steps.first().map_or(0, Policy::input_dim),
            Policy::Mlp(net) => net.output_dim(),
        }
    }

    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, Policy::TimeVarying(_))
    }

    /// Number of time steps the policy is defined for; `None` means all.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            Policy::TimeVarying(steps) => Some(steps.len()),
            _ => None,
        }
    }

    /// `π_k(x)`.
    pub fn act(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Policy::Zero { input_dim } => Ok(vec![0.0; *input_dim]),
            Policy::Constant(u) => Ok(u.clone()),
            Policy::TimeVarying(steps) => steps
                .get(k)
                .ok_or_else(|| {
                    Error::usage(format!("policy undefined at time {k} (defined for {} steps)", steps.len()))
                })?
                .act(k, x),
            Policy::Mlp(net) => mlp_forward(net, x),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Policy::Zero { .. } => "zero".into(),
            Policy::Constant(u) => format!("constant({u:?})"),
            Policy::TimeVarying(steps) => format!(
                "time-varying[{}]",
                steps.iter().map(Policy::describe).collect::<Vec<_>>().join(", ")
            ),
            Policy::Mlp(net) => format!("mlp(layers={}, output={:?})", net.layers().len(), net.output_mode()),
        }
    }
}
