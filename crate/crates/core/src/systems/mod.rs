//! Benchmark dynamics, disturbance models and policies.
//!
//! State orderings are fixed: the planar quadrotor is `(x, ẋ, y, ẏ, θ, θ̇)`
//! with inputs `(u₁, u₂)`, the cart-pole is `(x, ẋ, θ, θ̇)` with a scalar
//! force input. Continuous-time models are discretized with one forward
//! Euler step of length `t_step`; the disturbance is added afterwards.

mod disturbance;
mod mlp;
mod policy;

pub use disturbance::{draw_disturbance, Disturbance};
pub use mlp::{mlp_forward, Activation, Layer, Mlp, OutputMode};
pub(crate) use mlp::fmt17;
pub use policy::Policy;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_T_STEP: f64 = 0.1;
pub const DEFAULT_INTEGRATOR_T: f64 = 0.25;

/// Gravitational acceleration shared by the quadrotor and the cart-pole.
pub const GRAVITY: f64 = 9.8;

pub mod quadrotor {
    pub const MASS: f64 = 5.0;
    pub const INERTIA: f64 = 2.0;
    pub const ARM: f64 = 2.0;
}

pub mod cartpole {
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const TOTAL_MASS: f64 = 1.1;
}

/// Deterministic part of a Markov control process.
#[derive(Debug, Clone, PartialEq)]
pub enum System {
    /// `n`-th order chain of integrators with sampling time `t`.
    IntegratorChain { n: usize, t: f64 },
    PlanarQuadrotor { t_step: f64 },
    CartPoleLinear { t_step: f64 },
    CartPoleNonlinear { t_step: f64 },
    /// Block-diagonal composition of independent copies of `base`.
    Repeated { base: Box<System>, copies: usize },
}

impl System {
    pub fn integrator(n: usize, t: f64) -> Result<Self> {
        if n == 0 || !(t.is_finite() && t > 0.0) {
            return Err(Error::validation(format!(
                "integrator chain needs n >= 1 and T > 0, got n={n}, T={t}"
            )));
        }
        Ok(System::IntegratorChain { n, t })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            System::IntegratorChain { n, .. } => *n,
            System::PlanarQuadrotor { .. } => 6,
            System::CartPoleLinear { .. } | System::CartPoleNonlinear { .. } => 4,
            System::Repeated { base, copies } => base.state_dim() * copies,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            System::IntegratorChain { .. } => 1,
            System::PlanarQuadrotor { .. } => 2,
            System::CartPoleLinear { .. } | System::CartPoleNonlinear { .. } => 1,
            System::Repeated { base, copies } => base.input_dim() * copies,
        }
    }

    /// Dimension of one independently disturbed block.
    pub fn block_dim(&self) -> usize {
        match self {
            System::Repeated { base, .. } => base.block_dim(),
            s => s.state_dim(),
        }
    }

    /// Whether the nominal map `(x, u) ↦ x⁺` is affine.
    pub fn is_affine(&self) -> bool {
        match self {
            System::IntegratorChain { .. } | System::CartPoleLinear { .. } => true,
            System::Repeated { base, .. } => base.is_affine(),
            _ => false,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            System::IntegratorChain { n, t } => format!("integrator(n={n}, T={t})"),
            System::PlanarQuadrotor { t_step } => format!("quadrotor(T_step={t_step})"),
            System::CartPoleLinear { t_step } => format!("cartpole-linear(T_step={t_step})"),
            System::CartPoleNonlinear { t_step } => {
                format!("cartpole-nonlinear(T_step={t_step})")
            }
            System::Repeated { base, copies } => format!("repeat({}, copies={copies})", base.describe()),
        }
    }

    fn nominal(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            System::IntegratorChain { n, t } => {
                let (a, b) = integrator_matrices(*n, *t);
                for i in 0..*n {
                    let mut acc = b[i] * u[0];
                    for j in i..*n {
                        acc += a[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
            System::PlanarQuadrotor { t_step } => {
                use quadrotor::*;
                let thrust = u[0] + u[1];
                let (s, c) = x[4].sin_cos();
                let deriv = [
                    x[1],
                    -thrust * s / MASS,
                    x[3],
                    thrust * c / MASS - GRAVITY,
                    x[5],
                    ARM * (u[0] - u[1]) / INERTIA,
                ];
                euler(x, &deriv, *t_step, out);
            }
            System::CartPoleLinear { t_step } => {
                let (xd, th, thd, f) = (x[1], x[2], x[3], u[0]);
                let deriv = [
                    xd,
                    0.0043 * thd - 2.75 * th + 1.94 * f - 10.95 * xd,
                    thd,
                    28.58 * th - 0.044 * thd - 4.44 * f + 24.92 * xd,
                ];
                euler(x, &deriv, *t_step, out);
            }
            System::CartPoleNonlinear { t_step } => {
                let (xa, tha) = cartpole_accelerations(x[2], x[3], u[0]);
                let deriv = [x[1], xa, x[3], tha];
                euler(x, &deriv, *t_step, out);
            }
            System::Repeated { base, copies } => {
                let bn = base.state_dim();
                let bm = base.input_dim();
                for c in 0..*copies {
                    base.nominal(
                        &x[c * bn..(c + 1) * bn],
                        &u[c * bm..(c + 1) * bm],
                        &mut out[c * bn..(c + 1) * bn],
                    );
                }
            }
        }
    }
}

fn euler(x: &[f64], deriv: &[f64], dt: f64, out: &mut [f64]) {
    for ((o, xi), di) in out.iter_mut().zip(x).zip(deriv) {
        *o = xi + dt * di;
    }
}

/// Cart and pole accelerations `(ẍ, θ̈)` of the nonlinear cart-pole.
pub fn cartpole_accelerations(theta: f64, omega: f64, force: f64) -> (f64, f64) {
    use cartpole::*;
    let (s, c) = theta.sin_cos();
    let temp = (force + POLE_MASS * HALF_LENGTH * omega * omega * s) / TOTAL_MASS;
    let theta_acc =
        (GRAVITY * s - c * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * c * c / TOTAL_MASS));
    let x_acc = temp - POLE_MASS * HALF_LENGTH * theta_acc * c / TOTAL_MASS;
    (x_acc, theta_acc)
}

/// `A[i][j] = Tʲ⁻ⁱ/(j−i)!` for `j ≥ i` and `B[i] = Tⁿ⁻ⁱ/(n−i)!` (0-based).
pub fn integrator_matrices(n: usize, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let term = |p: usize| t.powi(p as i32) / factorial(p);
    let a = DMatrix::from_fn(n, n, |i, j| if j >= i { term(j - i) } else { 0.0 });
    let b = DVector::from_fn(n, |i, _| term(n - i));
    (a, b)
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|v| v as f64).product()
}

/// A system together with its additive disturbance.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    system: System,
    disturbance: Disturbance,
}

impl DynamicsModel {
    pub fn new(system: System, disturbance: Disturbance) -> Result<Self> {
        if disturbance.dim() != system.block_dim() {
            return Err(Error::validation(format!(
                "disturbance dimension {} does not match system block dimension {}",
                disturbance.dim(),
                system.block_dim()
            )));
        }
        Ok(DynamicsModel {
            system,
            disturbance,
        })
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn disturbance(&self) -> &Disturbance {
        &self.disturbance
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    /// One transition `x⁺ = f(x, u) + w` for a given disturbance realization
    /// `w` (one draw per block, concatenated).
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let n = self.state_dim();
        if x.len() != n {
            return Err(Error::dim_mismatch("step state", n, x.len()));
        }
        if u.len() != self.input_dim() {
            return Err(Error::dim_mismatch("step input", self.input_dim(), u.len()));
        }
        if w.len() != n {
            return Err(Error::dim_mismatch("step disturbance", n, w.len()));
        }
        let mut out = vec![0.0; n];
        self.system.nominal(x, u, &mut out);
        for (o, wi) in out.iter_mut().zip(w) {
            *o += wi;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::computation("non-finite state after step"));
        }
        Ok(out)
    }

    /// Draws a full-state realization: independent draws per block.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.state_dim();
        let mut w = Vec::with_capacity(n);
        while w.len() < n {
            w.extend(self.disturbance.draw(rng));
        }
        w
    }

    /// Samples `x⁺ ~ Q(· | x, u)`.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let w = self.draw(rng);
        self.step(x, u, &w)
    }
}

/// Block-diagonal composition of `copies` independent copies of `base`.
pub fn repeated_system(base: &DynamicsModel, copies: usize) -> Result<DynamicsModel> {
    if copies == 0 {
        return Err(Error::validation("repeated system needs at least one copy"));
    }
    DynamicsModel::new(
        System::Repeated {
            base: Box::new(base.system.clone()),
            copies,
        },
        base.disturbance.clone(),
    )
}
