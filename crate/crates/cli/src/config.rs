//! Experiment configuration files (TOML).
//!
//! Parsing is two-stage: serde maps the text onto plain structs (unknown
//! keys and type errors are usage errors), then [`ExperimentConfig`]
//! accessors build validated core objects on demand, so each command only
//! requires the blocks it actually uses.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use srk_core::algorithms::Problem;
use srk_core::kernel::KernelConfig;
use srk_core::oracle::{GridSpec, Quadrature};
use srk_core::rff::SolveRoute;
use srk_core::samples::InitialDistribution;
use srk_core::systems::{Disturbance, DynamicsModel, Mlp, Policy, System};
use srk_core::tubes::{ReachTube, StateSet};
use srk_core::{Error, Result};

use nalgebra::{DMatrix, DVector};

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub threads: Option<usize>,
    pub system: Option<SystemBlock>,
    pub policy: Option<PolicyBlock>,
    pub sample: Option<SampleBlock>,
    pub algorithm: Option<AlgorithmBlock>,
    pub problem: Option<ProblemBlock>,
    pub evaluation: Option<EvaluationBlock>,
    pub oracle: Option<OracleBlock>,
    pub bench: Option<BenchBlock>,
    pub output: Option<OutputBlock>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Integrator,
    PlanarQuadrotor,
    CartpoleLinear,
    CartpoleNonlinear,
    RepeatedQuadrotor,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub kind: SystemKind,
    /// Integrator chain length.
    pub n: Option<usize>,
    /// Integrator sampling time.
    pub t: Option<f64>,
    /// Euler step of the continuous-time models.
    pub t_step: Option<f64>,
    pub copies: Option<usize>,
    pub disturbance: Option<DisturbanceBlock>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    None,
    Gaussian,
    Beta,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceBlock {
    pub kind: DisturbanceKind,
    /// Isotropic variance, an alternative to `covariance`.
    pub variance: Option<f64>,
    pub mean: Option<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub shift: Option<f64>,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Zero,
    Constant,
    Mlp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyBlock {
    pub kind: PolicyKind,
    pub value: Option<Vec<f64>>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Uniform,
    List,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    pub kind: InitKind,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub states: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBlock {
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<InitBlock>,
    /// Existing dataset used instead of generating one.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Rff,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Rff => "rff",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    Auto,
    Primal,
    Dual,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmBlock {
    pub kind: SolverKind,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    /// Number of frequency draws.
    pub d: Option<usize>,
    pub seed: Option<u64>,
    pub route: Option<RouteKind>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKindConfig {
    FirstHitting,
    TerminalHitting,
    ReachAvoid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeBlock {
    /// Rows of `A` in `A x ≤ b`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetBlock {
    #[serde(rename = "box")]
    pub boxed: Option<BoxBlock>,
    pub polytope: Option<PolytopeBlock>,
}

/// One tube entry: a set for a single `step` or an inclusive `repeat`
/// range of steps.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeEntry {
    pub step: Option<usize>,
    pub repeat: Option<[usize; 2]>,
    #[serde(rename = "box")]
    pub boxed: Option<BoxBlock>,
    pub polytope: Option<PolytopeBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub kind: ProblemKindConfig,
    pub horizon: usize,
    #[serde(default)]
    pub target: Vec<TubeEntry>,
    #[serde(default)]
    pub constraint: Vec<TubeEntry>,
    pub safe: Option<SetBlock>,
    pub goal: Option<SetBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    pub grid: Option<GridBlock>,
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    Auto,
    GaussHermite,
    BoxGaussian,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    pub quadrature: Option<QuadratureKind>,
    pub order: Option<usize>,
    pub grid: Option<GridBlock>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    M,
    D,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchBlock {
    pub sweep: SweepKind,
    pub values: Vec<usize>,
    pub repeats: Option<usize>,
    pub solver: Option<SolverKind>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub path: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

/// Where the sample comes from.
#[derive(Debug, Clone)]
pub enum SampleSource {
    Generate {
        count: usize,
        seed: u64,
        init: InitialDistribution,
    },
    Load(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSettings {
    pub solver: SolverKind,
    pub kernel: KernelConfig,
    pub features: Option<usize>,
    pub seed: u64,
    pub route: SolveRoute,
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub sweep: SweepKind,
    pub values: Vec<usize>,
    pub repeats: usize,
    pub solver: SolverKind,
}

pub const DEFAULT_REPEATS: usize = 3;
pub const MAX_ORACLE_GRID_NODES: usize = 2_000_000;

/// A parsed configuration with its raw text kept for echoing.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

fn check_positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(validation(format!("{name} must be a positive finite number, got {v}")))
    }
}

fn missing(block: &str, key: &str) -> Error {
    usage(format!("missing `{key}` in [{block}]"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ExperimentConfig::parse(&text, &base_dir)
    }

    /// Parses `text`; relative paths inside resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| usage(format!("config: {}", e.message())))?;
        let cfg = ExperimentConfig {
            raw,
            text: text.to_string(),
            base_dir: base_dir.to_path_buf(),
        };
        cfg.check_references()?;
        Ok(cfg)
    }

    /// The config as a JSON value, for run metadata.
    pub fn echo(&self) -> serde_json::Value {
        toml::from_str::<toml::Table>(&self.text)
            .ok()
            .and_then(|t| serde_json::to_value(t).ok())
            .unwrap_or(serde_json::Value::Null)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn check_references(&self) -> Result<()> {
        let mut files = Vec::new();
        if let Some(p) = self.raw.policy.as_ref().and_then(|p| p.path.as_ref()) {
            files.push(p);
        }
        if let Some(p) = self.raw.sample.as_ref().and_then(|s| s.dataset.as_ref()) {
            files.push(p);
        }
        for f in files {
            let full = self.resolve(f);
            if !full.is_file() {
                return Err(validation(format!("referenced file {} does not exist", full.display())));
            }
        }
        if self.raw.threads == Some(0) {
            return Err(validation("threads must be at least 1"));
        }
        Ok(())
    }

    pub fn threads(&self) -> Option<usize> {
        self.raw.threads
    }

    fn system_block(&self) -> Result<&SystemBlock> {
        self.raw.system.as_ref().ok_or_else(|| usage("missing [system] block"))
    }

    pub fn system(&self) -> Result<System> {
        let s = self.system_block()?;
        let t_step = s.t_step.map(|t| check_positive("system.t_step", t)).transpose()?;
        let step = t_step.unwrap_or(srk_core::systems::DEFAULT_T_STEP);
        match s.kind {
            SystemKind::Integrator => {
                let n = s.n.ok_or_else(|| missing("system", "n"))?;
                if n == 0 {
                    return Err(validation("system.n must be at least 1"));
                }
                let t = check_positive("system.t", s.t.unwrap_or(srk_core::systems::DEFAULT_INTEGRATOR_T))?;
                System::integrator(n, t)
            }
            SystemKind::PlanarQuadrotor => Ok(System::PlanarQuadrotor { t_step: step }),
            SystemKind::CartpoleLinear => Ok(System::CartPoleLinear { t_step: step }),
            SystemKind::CartpoleNonlinear => Ok(System::CartPoleNonlinear { t_step: step }),
            SystemKind::RepeatedQuadrotor => {
                let copies = s.copies.ok_or_else(|| missing("system", "copies"))?;
                if copies == 0 {
                    return Err(validation("system.copies must be at least 1"));
                }
                Ok(System::Repeated {
                    base: Box::new(System::PlanarQuadrotor { t_step: step }),
                    copies,
                })
            }
        }
    }

    fn disturbance(&self, dim: usize) -> Result<Disturbance> {
        let Some(d) = self.system_block()?.disturbance.as_ref() else {
            return Ok(Disturbance::none(dim));
        };
        match d.kind {
            DisturbanceKind::None => Ok(Disturbance::none(dim)),
            DisturbanceKind::Gaussian => {
                let mean = match &d.mean {
                    Some(m) if m.len() != dim => {
                        return Err(validation(format!("disturbance mean must have {dim} entries")))
                    }
                    Some(m) => DVector::from_column_slice(m),
                    None => DVector::zeros(dim),
                };
                let cov = match (&d.covariance, d.variance) {
                    (Some(_), Some(_)) => {
                        return Err(usage("give either disturbance.variance or disturbance.covariance"))
                    }
                    (Some(rows), None) => {
                        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                            return Err(validation(format!("disturbance covariance must be {dim}x{dim}")));
                        }
                        DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
                    }
                    (None, Some(v)) => {
                        if !(v.is_finite() && v >= 0.0) {
                            return Err(validation(format!("disturbance variance must be >= 0, got {v}")));
                        }
                        DMatrix::from_diagonal_element(dim, dim, v)
                    }
                    (None, None) => return Err(missing("system.disturbance", "variance")),
                };
                Disturbance::gaussian(mean, cov).map_err(as_validation)
            }
            DisturbanceKind::Beta => {
                let alpha = check_positive("disturbance.alpha", d.alpha.unwrap_or(2.0))?;
                let beta = check_positive("disturbance.beta", d.beta.unwrap_or(2.0))?;
                let shift = d.shift.unwrap_or(-0.5);
                let scale = check_positive("disturbance.scale", d.scale.unwrap_or(1.0))?;
                Disturbance::beta(alpha, beta, vec![shift; dim], vec![scale; dim]).map_err(as_validation)
            }
        }
    }

    pub fn model(&self) -> Result<DynamicsModel> {
        let system = self.system()?;
        let dist = self.disturbance(system.block_dim())?;
        DynamicsModel::new(system, dist)
    }

    pub fn policy(&self, input_dim: usize) -> Result<Policy> {
        let Some(p) = self.raw.policy.as_ref() else {
            return Ok(Policy::zero(input_dim));
        };
        let policy = match p.kind {
            PolicyKind::Zero => Policy::zero(input_dim),
            PolicyKind::Constant => Policy::Constant(p.value.clone().ok_or_else(|| missing("policy", "value"))?),
            PolicyKind::Mlp => {
                let path = self.resolve(p.path.as_ref().ok_or_else(|| missing("policy", "path"))?);
                Policy::mlp(Mlp::load(&path)?)
            }
        };
        if policy.input_dim() != input_dim {
            return Err(validation(format!(
                "policy produces {} inputs, system takes {input_dim}",
                policy.input_dim()
            )));
        }
        Ok(policy)
    }

    pub fn sample_source(&self, state_dim: usize) -> Result<SampleSource> {
        self.sample_source_sized(state_dim, None)
    }

    /// Like [`ExperimentConfig::sample_source`], with `count` standing in
    /// for `sample.m` when given.
    pub fn sample_source_sized(&self, state_dim: usize, count: Option<usize>) -> Result<SampleSource> {
        let s = self.raw.sample.as_ref().ok_or_else(|| usage("missing [sample] block"))?;
        if let Some(path) = &s.dataset {
            if s.m.is_some() || s.init.is_some() {
                return Err(usage("[sample] takes either `dataset` or `m` + `init`, not both"));
            }
            return Ok(SampleSource::Load(self.resolve(path)));
        }
        let count = count.or(s.m).ok_or_else(|| missing("sample", "m"))?;
        if count == 0 {
            return Err(validation("sample.m must be at least 1"));
        }
        let init = s.init.as_ref().ok_or_else(|| missing("sample", "init"))?;
        let init = match init.kind {
            InitKind::Uniform => {
                let lower = init.lower.clone().ok_or_else(|| missing("sample.init", "lower"))?;
                let upper = init.upper.clone().ok_or_else(|| missing("sample.init", "upper"))?;
                if lower.len() != state_dim || upper.len() != state_dim {
                    return Err(validation(format!("sample.init bounds must have {state_dim} entries")));
                }
                if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
                    return Err(validation("sample.init needs lower <= upper"));
                }
                InitialDistribution::UniformBox { lower, upper }
            }
            InitKind::List => {
                let states = init.states.clone().ok_or_else(|| missing("sample.init", "states"))?;
                if states.is_empty() || states.iter().any(|s| s.len() != state_dim) {
                    return Err(validation(format!("sample.init states must be nonempty {state_dim}-vectors")));
                }
                InitialDistribution::FixedList(states)
            }
        };
        Ok(SampleSource::Generate {
            count,
            seed: s.seed.unwrap_or(0),
            init,
        })
    }

    pub fn algorithm(&self) -> Result<AlgorithmSettings> {
        let a = self.raw.algorithm.as_ref().ok_or_else(|| usage("missing [algorithm] block"))?;
        let sigma = check_positive("algorithm.sigma", a.sigma.unwrap_or(0.1))?;
        let lambda = check_positive("algorithm.lambda", a.lambda.unwrap_or(1.0))?;
        let features = match a.kind {
            SolverKind::Rff => {
                let d = a.d.ok_or_else(|| missing("algorithm", "d"))?;
                if d == 0 {
                    return Err(validation("algorithm.d must be at least 1"));
                }
                Some(d)
            }
            SolverKind::Exact => None,
        };
        let route = match a.route.unwrap_or(RouteKind::Auto) {
            RouteKind::Auto => SolveRoute::Auto,
            RouteKind::Primal => SolveRoute::Primal,
            RouteKind::Dual => SolveRoute::Dual,
        };
        Ok(AlgorithmSettings {
            solver: a.kind,
            kernel: KernelConfig::new(sigma, lambda)?,
            features,
            seed: a.seed.unwrap_or(0),
            route,
        })
    }

    pub fn problem(&self, state_dim: usize) -> Result<Problem> {
        let p = self.raw.problem.as_ref().ok_or_else(|| usage("missing [problem] block"))?;
        let n = p.horizon;
        match p.kind {
            ProblemKindConfig::ReachAvoid => {
                if !p.target.is_empty() || !p.constraint.is_empty() {
                    return Err(usage("reach_avoid takes [problem.safe] and [problem.goal], not tube entries"));
                }
                let safe = build_set(p.safe.as_ref().ok_or_else(|| usage("missing [problem.safe]"))?, state_dim)?;
                let goal = build_set(p.goal.as_ref().ok_or_else(|| usage("missing [problem.goal]"))?, state_dim)?;
                Problem::reach_avoid(safe, goal, n)
            }
            ProblemKindConfig::TerminalHitting => {
                if !p.constraint.is_empty() || p.safe.is_some() || p.goal.is_some() {
                    return Err(usage("terminal_hitting takes only [[problem.target]] entries"));
                }
                Ok(Problem::terminal_hitting(build_tube(&p.target, n, state_dim, "target")?))
            }
            ProblemKindConfig::FirstHitting => {
                if p.safe.is_some() || p.goal.is_some() {
                    return Err(usage("first_hitting takes [[problem.target]] and [[problem.constraint]] entries"));
                }
                Problem::first_hitting(
                    build_tube(&p.constraint, n, state_dim, "constraint")?,
                    build_tube(&p.target, n, state_dim, "target")?,
                )
            }
        }
    }

    /// Evaluation points, one per column.
    pub fn evaluation_points(&self, state_dim: usize) -> Result<DMatrix<f64>> {
        let e = self.raw.evaluation.as_ref().ok_or_else(|| usage("missing [evaluation] block"))?;
        match (&e.grid, &e.points) {
            (Some(g), None) => Ok(build_grid(g, state_dim)?.nodes()),
            (None, Some(points)) => {
                if points.is_empty() || points.iter().any(|p| p.len() != state_dim) {
                    return Err(validation(format!("evaluation points must be nonempty {state_dim}-vectors")));
                }
                Ok(DMatrix::from_fn(state_dim, points.len(), |r, c| points[c][r]))
            }
            _ => Err(usage("[evaluation] takes exactly one of `grid` or `points`")),
        }
    }

    /// The oracle grid: `[oracle].grid`, else the evaluation grid.
    pub fn oracle_grid(&self, state_dim: usize) -> Result<GridSpec> {
        let own = self.raw.oracle.as_ref().and_then(|o| o.grid.as_ref());
        let eval = self.raw.evaluation.as_ref().and_then(|e| e.grid.as_ref());
        let g = own.or(eval).ok_or_else(|| usage("the oracle needs [oracle].grid or [evaluation].grid"))?;
        let grid = build_grid(g, state_dim)?;
        if grid.len() > MAX_ORACLE_GRID_NODES {
            return Err(validation(format!("oracle grid has {} nodes, limit {MAX_ORACLE_GRID_NODES}", grid.len())));
        }
        Ok(grid)
    }

    pub fn quadrature(&self) -> Result<Quadrature> {
        let Some(o) = self.raw.oracle.as_ref() else {
            return Ok(Quadrature::Auto);
        };
        match (o.quadrature.unwrap_or(QuadratureKind::Auto), o.order) {
            (QuadratureKind::GaussHermite, order) => {
                let q = order.unwrap_or(srk_core::oracle::DEFAULT_QUADRATURE_ORDER);
                if !(1..=64).contains(&q) {
                    return Err(validation(format!("oracle.order must be in 1..=64, got {q}")));
                }
                Ok(Quadrature::GaussHermite(q))
            }
            (_, Some(_)) => Err(usage("oracle.order applies to gauss_hermite quadrature only")),
            (QuadratureKind::Auto, None) => Ok(Quadrature::Auto),
            (QuadratureKind::BoxGaussian, None) => Ok(Quadrature::BoxGaussian),
        }
    }

    pub fn bench(&self) -> Result<BenchSettings> {
        let b = self.raw.bench.as_ref().ok_or_else(|| usage("missing [bench] block"))?;
        if b.values.is_empty() || b.values.contains(&0) {
            return Err(validation("bench.values must be a nonempty list of positive integers"));
        }
        let repeats = b.repeats.unwrap_or(DEFAULT_REPEATS);
        if repeats == 0 {
            return Err(validation("bench.repeats must be at least 1"));
        }
        let solver = match b.solver {
            Some(s) => s,
            None => self.algorithm()?.solver,
        };
        if b.sweep == SweepKind::D && solver != SolverKind::Rff {
            return Err(usage("a `d` sweep needs the rff solver"));
        }
        Ok(BenchSettings {
            sweep: b.sweep,
            values: b.values.clone(),
            repeats,
            solver,
        })
    }

    pub fn output_path(&self) -> Option<PathBuf> {
        self.raw.output.as_ref().and_then(|o| o.path.as_ref()).map(|p| self.resolve(p))
    }

    pub fn dataset_output_path(&self) -> Option<PathBuf> {
        self.raw.output.as_ref().and_then(|o| o.dataset.as_ref()).map(|p| self.resolve(p))
    }
}

fn as_validation(e: Error) -> Error {
    match e {
        Error::Usage(m) => Error::Validation(m),
        other => other,
    }
}

fn build_grid(g: &GridBlock, dim: usize) -> Result<GridSpec> {
    if g.lower.len() != dim || g.upper.len() != dim || g.points.len() != dim {
        return Err(validation(format!("grid lower, upper and points must have {dim} entries")));
    }
    GridSpec::new(g.lower.clone(), g.upper.clone(), g.points.clone()).map_err(as_validation)
}

fn build_set_parts(boxed: Option<&BoxBlock>, polytope: Option<&PolytopeBlock>, dim: usize) -> Result<StateSet> {
    match (boxed, polytope) {
        (Some(b), None) => {
            if b.lower.len() != dim || b.upper.len() != dim {
                return Err(validation(format!("box bounds must have {dim} entries")));
            }
            StateSet::boxed(b.lower.clone(), b.upper.clone())
        }
        (None, Some(p)) => {
            if p.a.is_empty() || p.a.len() != p.b.len() || p.a.iter().any(|r| r.len() != dim) {
                return Err(validation(format!(
                    "polytope needs matching rows of A (each {dim} wide) and entries of b"
                )));
            }
            let a = DMatrix::from_fn(p.a.len(), dim, |i, j| p.a[i][j]);
            StateSet::polytope(a, DVector::from_column_slice(&p.b)).map_err(as_validation)
        }
        _ => Err(usage("a set takes exactly one of `box` or `polytope`")),
    }
}

fn build_set(s: &SetBlock, dim: usize) -> Result<StateSet> {
    build_set_parts(s.boxed.as_ref(), s.polytope.as_ref(), dim)
}

/// Expands tube entries into one set per step `0..=horizon`, each step
/// covered exactly once.
fn build_tube(entries: &[TubeEntry], horizon: usize, dim: usize, name: &str) -> Result<ReachTube> {
    if entries.is_empty() {
        return Err(usage(format!("missing [[problem.{name}]] entries")));
    }
    let mut sets: Vec<Option<StateSet>> = vec![None; horizon + 1];
    for e in entries {
        let (from, to) = match (e.step, e.repeat) {
            (Some(k), None) => (k, k),
            (None, Some([a, b])) => (a, b),
            _ => return Err(usage(format!("each {name} entry takes exactly one of `step` or `repeat`"))),
        };
        if from > to || to > horizon {
            return Err(validation(format!(
                "{name} steps {from}..={to} fall outside 0..={horizon}"
            )));
        }
        let set = build_set_parts(e.boxed.as_ref(), e.polytope.as_ref(), dim)?;
        for slot in &mut sets[from..=to] {
            if slot.is_some() {
                return Err(validation(format!("{name} tube assigns a step twice")));
            }
            *slot = Some(set.clone());
        }
    }
    let sets = sets
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or_else(|| validation(format!("{name} tube has no set for step {k}"))))
        .collect::<Result<Vec<_>>>()?;
    ReachTube::new(sets)
}
