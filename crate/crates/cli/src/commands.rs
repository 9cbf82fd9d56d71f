//! The `sample`, `solve`, `oracle`, `bench` and `compare` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde_json::json;
use srk_core::algorithms::{fit, solve_exact, solve_rff, Problem, SafetyField};
use srk_core::oracle::{dp_solve, MAX_ORACLE_DIM};
use srk_core::rff::{rff_fit, sample_frequencies, SolveRoute};
use srk_core::samples::{self, generate, SampleSet};
use srk_core::systems::{Disturbance, DynamicsModel, Policy};
use srk_core::{Error, Result};

use crate::config::{AlgorithmSettings, ExperimentConfig, SampleSource, SolverKind, SweepKind};
use crate::results::{
    atomic_write, compare_tables, comparison_csv, fmt_value, read_results, write_field, Comparison,
};

pub const DEFAULT_DATASET_PATH: &str = "dataset.txt";
pub const DEFAULT_RESULTS_PATH: &str = "results.csv";
pub const DEFAULT_BENCH_PATH: &str = "bench.csv";

fn pick_output(flag: Option<&Path>, configured: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or(configured)
        .unwrap_or_else(|| PathBuf::from(fallback))
}

/// `<results>.meta.json`.
pub fn meta_path(results: &Path) -> PathBuf {
    let mut s = results.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Everything a solve or oracle run needs besides the solver choice.
pub struct Experiment {
    pub model: DynamicsModel,
    pub policy: Policy,
    pub problem: Problem,
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let model = cfg.model()?;
        let policy = cfg.policy(model.input_dim())?;
        let problem = cfg.problem(model.state_dim())?;
        Ok(Experiment { model, policy, problem })
    }
}

pub fn obtain_sample(cfg: &ExperimentConfig, model: &DynamicsModel, policy: &Policy) -> Result<SampleSet> {
    match cfg.sample_source(model.state_dim())? {
        SampleSource::Generate { count, seed, init } => generate(model, policy, &init, count, seed),
        SampleSource::Load(path) => {
            let s = samples::load(&path)?;
            if s.state_dim() != model.state_dim() || s.input_dim() != model.input_dim() {
                return Err(Error::Validation(format!(
                    "dataset {} has n={}, m={} but the system has n={}, m={}",
                    path.display(),
                    s.state_dim(),
                    s.input_dim(),
                    model.state_dim(),
                    model.input_dim()
                )));
            }
            Ok(s)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveTimings {
    pub fit: f64,
    pub recursion: f64,
}

impl SolveTimings {
    pub fn total(&self) -> f64 {
        self.fit + self.recursion
    }
}

pub struct SolveOutcome {
    pub field: SafetyField,
    pub timings: SolveTimings,
    pub route: Option<SolveRoute>,
}

/// Fits the configured embedding and runs its recursion.
pub fn run_solver(
    algo: &AlgorithmSettings,
    sample: &SampleSet,
    problem: &Problem,
    policy: &Policy,
    eval: &DMatrix<f64>,
) -> Result<SolveOutcome> {
    let start = Instant::now();
    match algo.solver {
        SolverKind::Exact => {
            let model = fit(sample, &algo.kernel)?;
            let fitted = Instant::now();
            let field = solve_exact(&model, problem, policy, eval)?;
            Ok(SolveOutcome {
                field,
                timings: SolveTimings {
                    fit: (fitted - start).as_secs_f64(),
                    recursion: fitted.elapsed().as_secs_f64(),
                },
                route: None,
            })
        }
        SolverKind::Rff => {
            let d = algo.features.ok_or_else(|| Error::Usage("rff needs algorithm.d".into()))?;
            let dim = sample.state_dim() + sample.input_dim();
            let freq = sample_frequencies(dim, d, algo.kernel.sigma(), algo.seed)?;
            let model = rff_fit(sample, &algo.kernel, &freq, algo.route)?;
            let fitted = Instant::now();
            let field = solve_rff(&model, problem, policy, eval)?;
            Ok(SolveOutcome {
                field,
                timings: SolveTimings {
                    fit: (fitted - start).as_secs_f64(),
                    recursion: fitted.elapsed().as_secs_f64(),
                },
                route: Some(model.route()),
            })
        }
    }
}

fn route_name(r: SolveRoute) -> &'static str {
    match r {
        SolveRoute::Auto => "auto",
        SolveRoute::Primal => "primal",
        SolveRoute::Dual => "dual",
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Computation(e.to_string()))?;
    atomic_write(path, format!("{text}\n").as_bytes())
}

#[derive(Debug, Clone)]
pub struct SampleSummary {
    pub path: PathBuf,
    pub size: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub seed: u64,
}

pub fn cmd_sample(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SampleSummary> {
    let model = cfg.model()?;
    let policy = cfg.policy(model.input_dim())?;
    let SampleSource::Generate { count, seed, init } = cfg.sample_source(model.state_dim())? else {
        return Err(Error::Usage("sample needs `m` and `init` in [sample], not `dataset`".into()));
    };
    let set = generate(&model, &policy, &init, count, seed)?;
    let path = pick_output(out, cfg.dataset_output_path(), DEFAULT_DATASET_PATH);
    atomic_write(&path, set.to_text().as_bytes())?;
    Ok(SampleSummary {
        path,
        size: set.len(),
        state_dim: set.state_dim(),
        input_dim: set.input_dim(),
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub path: PathBuf,
    pub meta: PathBuf,
    pub points: usize,
    pub timings: SolveTimings,
}

pub fn cmd_solve(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SolveSummary> {
    let exp = Experiment::from_config(cfg)?;
    let algo = cfg.algorithm()?;
    let eval = cfg.evaluation_points(exp.model.state_dim())?;
    let started = Instant::now();
    let sample = obtain_sample(cfg, &exp.model, &exp.policy)?;
    let sample_time = started.elapsed().as_secs_f64();
    let outcome = run_solver(&algo, &sample, &exp.problem, &exp.policy, &eval)?;

    let path = pick_output(out, cfg.output_path(), DEFAULT_RESULTS_PATH);
    let meta = meta_path(&path);
    write_field(&path, &outcome.field)?;
    let value = json!({
        "command": "solve",
        "config": cfg.echo(),
        "config_text": cfg.text,
        "solver": algo.solver.name(),
        "kernel": { "sigma": algo.kernel.sigma(), "lambda": algo.kernel.lambda() },
        "rff": algo.features.map(|d| json!({
            "d": d,
            "route": outcome.route.map(route_name),
        })),
        "seeds": {
            "sample": sample.meta().seed,
            "rff": algo.features.map(|_| algo.seed),
        },
        "sample_size": sample.len(),
        "problem": exp.problem.kind().name(),
        "horizon": exp.problem.horizon(),
        "points": outcome.field.len(),
        "timings_seconds": {
            "sample": sample_time,
            "fit": outcome.timings.fit,
            "recursion": outcome.timings.recursion,
            "total": started.elapsed().as_secs_f64(),
        },
        "results": path.display().to_string(),
    });
    write_json(&meta, &value)?;
    Ok(SolveSummary {
        path,
        meta,
        points: outcome.field.len(),
        timings: outcome.timings,
    })
}

/// The oracle's model restrictions, reported as validation failures.
fn check_oracle_model(model: &DynamicsModel) -> Result<()> {
    let n = model.state_dim();
    if n > MAX_ORACLE_DIM {
        return Err(Error::Validation(format!(
            "the oracle supports at most {MAX_ORACLE_DIM} state dimensions, the system has {n}"
        )));
    }
    if !model.system().is_affine() || model.system().block_dim() != n {
        return Err(Error::Validation(format!(
            "the oracle supports unrepeated affine systems only, got {}",
            model.system().describe()
        )));
    }
    if matches!(model.disturbance(), Disturbance::Beta { .. }) {
        return Err(Error::Validation("the oracle supports Gaussian or no disturbance only".into()));
    }
    Ok(())
}

pub fn cmd_oracle(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SolveSummary> {
    let exp = Experiment::from_config(cfg)?;
    check_oracle_model(&exp.model)?;
    let grid = cfg.oracle_grid(exp.model.state_dim())?;
    let quadrature = cfg.quadrature()?;
    let started = Instant::now();
    let field = dp_solve(&exp.model, &exp.problem, &exp.policy, &grid, quadrature)?;
    let elapsed = started.elapsed().as_secs_f64();

    let path = pick_output(out, cfg.output_path(), DEFAULT_RESULTS_PATH);
    let meta = meta_path(&path);
    write_field(&path, &field)?;
    let value = json!({
        "command": "oracle",
        "config": cfg.echo(),
        "config_text": cfg.text,
        "quadrature": quadrature.describe(),
        "grid": { "lower": grid.lower(), "upper": grid.upper(), "points": grid.points_per_dim() },
        "seeds": {},
        "problem": exp.problem.kind().name(),
        "horizon": exp.problem.horizon(),
        "points": field.len(),
        "timings_seconds": { "total": elapsed },
        "results": path.display().to_string(),
    });
    write_json(&meta, &value)?;
    Ok(SolveSummary {
        path,
        meta,
        points: field.len(),
        timings: SolveTimings {
            fit: 0.0,
            recursion: elapsed,
        },
    })
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub path: PathBuf,
    /// `(parameter, median seconds)` per sweep point.
    pub rows: Vec<(usize, f64)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median fit-plus-recursion wall time per sweep point.
pub fn cmd_bench(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<BenchSummary> {
    let exp = Experiment::from_config(cfg)?;
    let bench = cfg.bench()?;
    let mut algo = cfg.algorithm()?;
    algo.solver = bench.solver;
    if algo.solver == SolverKind::Rff && algo.features.is_none() && bench.sweep == SweepKind::M {
        return Err(Error::Usage("an rff bench over m needs algorithm.d".into()));
    }
    let eval = cfg.evaluation_points(exp.model.state_dim())?;
    let sweep_count = (bench.sweep == SweepKind::M).then_some(bench.values[0]);
    let source = cfg.sample_source_sized(exp.model.state_dim(), sweep_count)?;
    let fixed = match (&source, bench.sweep) {
        (SampleSource::Load(_), SweepKind::M) => {
            return Err(Error::Usage("an m sweep generates samples; [sample] needs `init`, not `dataset`".into()))
        }
        (_, SweepKind::D) => Some(obtain_sample(cfg, &exp.model, &exp.policy)?),
        _ => None,
    };
    let mut rows = Vec::with_capacity(bench.values.len());
    for &value in &bench.values {
        let sample = match (&fixed, &source) {
            (Some(s), _) => s.clone(),
            (None, SampleSource::Generate { seed, init, .. }) => generate(&exp.model, &exp.policy, init, value, *seed)?,
            (None, SampleSource::Load(_)) => unreachable!(),
        };
        if bench.sweep == SweepKind::D {
            algo.features = Some(value);
        }
        let mut times = Vec::with_capacity(bench.repeats);
        for _ in 0..bench.repeats {
            let outcome = run_solver(&algo, &sample, &exp.problem, &exp.policy, &eval)?;
            times.push(outcome.timings.total());
        }
        rows.push((value, median(times)));
    }
    let path = pick_output(out, cfg.output_path(), DEFAULT_BENCH_PATH);
    let mut text = String::from("param,median_seconds\n");
    for (p, t) in &rows {
        text.push_str(&format!("{p},{}\n", fmt_value(*t)));
    }
    atomic_write(&path, text.as_bytes())?;
    Ok(BenchSummary { path, rows })
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub path: PathBuf,
    pub comparison: Comparison,
}

/// `<a>.diff.csv` next to the first file.
pub fn default_diff_path(a: &Path) -> PathBuf {
    let mut s = a.as_os_str().to_owned();
    s.push(".diff.csv");
    PathBuf::from(s)
}

pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<CompareSummary> {
    let ta = read_results(a)?;
    let tb = read_results(b)?;
    let comparison = compare_tables(&ta, &tb)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| default_diff_path(a));
    atomic_write(&path, &comparison_csv(&ta, &tb, &comparison)?)?;
    Ok(CompareSummary { path, comparison })
}
