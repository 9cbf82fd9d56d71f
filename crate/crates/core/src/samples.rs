//! Transition datasets `(X, U, Y)` and their text format.
//!
//! ```text
//! # srk-sample v1
//! # generator: <free text>        (optional metadata comments)
//! # seed: <u64>
//! dims n m M
//! x_1 … x_n u_1 … u_m y_1 … y_n   (M lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::systems::{DynamicsModel, Policy};

pub const SAMPLE_HEADER: &str = "# srk-sample v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleMeta {
    pub generator: Option<String>,
    pub seed: Option<u64>,
}

/// `M` transitions stored column-wise: column `i` of `states`, `inputs`
/// and `successors` is the triple `(xᵢ, uᵢ, x'ᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    states: DMatrix<f64>,
    inputs: DMatrix<f64>,
    successors: DMatrix<f64>,
    meta: SampleMeta,
}

impl SampleSet {
    pub fn new(states: DMatrix<f64>, inputs: DMatrix<f64>, successors: DMatrix<f64>) -> Result<Self> {
        let m = states.ncols();
        if m == 0 {
            return Err(Error::validation("sample set must contain at least one transition"));
        }
        if inputs.ncols() != m || successors.ncols() != m {
            return Err(Error::validation(format!(
                "row counts differ: X has {m}, U has {}, Y has {}",
                inputs.ncols(),
                successors.ncols()
            )));
        }
        if successors.nrows() != states.nrows() {
            return Err(Error::validation(format!(
                "successor dimension {} differs from state dimension {}",
                successors.nrows(),
                states.nrows()
            )));
        }
        if states.nrows() == 0 {
            return Err(Error::validation("state dimension must be positive"));
        }
        Ok(SampleSet {
            states,
            inputs,
            successors,
            meta: SampleMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: SampleMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// `n × M`.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    /// `m × M`.
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    /// `n × M`.
    pub fn successors(&self) -> &DMatrix<f64> {
        &self.successors
    }

    /// Stacked `(xᵢ, uᵢ)` columns, `(n + m) × M`.
    pub fn pairs(&self) -> DMatrix<f64> {
        stack_rows(&self.states, &self.inputs)
    }

    pub fn to_text(&self) -> String {
        let (n, m, count) = (self.state_dim(), self.input_dim(), self.len());
        let mut s = String::with_capacity(count * (2 * n + m) * 24 + 64);
        writeln!(s, "{SAMPLE_HEADER}").unwrap();
        if let Some(g) = &self.meta.generator {
            writeln!(s, "# generator: {}", g.replace('\n', " ")).unwrap();
        }
        if let Some(seed) = self.meta.seed {
            writeln!(s, "# seed: {seed}").unwrap();
        }
        writeln!(s, "dims {n} {m} {count}").unwrap();
        for i in 0..count {
            let row = self
                .states
                .column(i)
                .iter()
                .chain(self.inputs.column(i).iter())
                .chain(self.successors.column(i).iter())
                .map(|&v| crate::systems::fmt17(v))
                .collect::<Vec<_>>();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.find(|(_, l)| !l.is_empty()) {
            Some((_, l)) if l == SAMPLE_HEADER => {}
            Some((no, l)) => return Err(Error::parse(no, format!("expected `{SAMPLE_HEADER}`, found `{l}`"))),
            None => return Err(Error::parse(1, "empty dataset file")),
        }
        let mut meta = SampleMeta::default();
        let mut dims: Option<(usize, usize, usize)> = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(g) = comment.strip_prefix("generator:") {
                    meta.generator = Some(g.trim().to_string());
                } else if let Some(sd) = comment.strip_prefix("seed:") {
                    meta.seed = Some(
                        sd.trim()
                            .parse()
                            .map_err(|_| Error::parse(no, format!("invalid seed `{}`", sd.trim())))?,
                    );
                }
                continue;
            }
            match dims {
                None => {
                    let toks: Vec<&str> = line.split_whitespace().collect();
                    if toks.len() != 4 || toks[0] != "dims" {
                        return Err(Error::parse(no, format!("expected `dims n m M`, found `{line}`")));
                    }
                    let parse = |t: &str| {
                        t.parse::<usize>()
                            .map_err(|_| Error::parse(no, format!("invalid dimension `{t}`")))
                    };
                    dims = Some((parse(toks[1])?, parse(toks[2])?, parse(toks[3])?));
                }
                Some(_) => {
                    let row = line
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|_| Error::parse(no, format!("invalid number `{t}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rows.push((no, row));
                }
            }
        }
        let Some((n, m, count)) = dims else {
            return Err(Error::parse(text.lines().count().max(1), "missing `dims` line"));
        };
        if n == 0 || count == 0 {
            return Err(Error::validation(format!("dataset needs n >= 1 and M >= 1, got n={n}, M={count}")));
        }
        if rows.len() != count {
            return Err(Error::validation(format!(
                "dims declares {count} transitions but file holds {}",
                rows.len()
            )));
        }
        let width = 2 * n + m;
        let mut x = DMatrix::zeros(n, count);
        let mut u = DMatrix::zeros(m, count);
        let mut y = DMatrix::zeros(n, count);
        for (i, (no, row)) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::validation(format!(
                    "line {no}: expected {width} values (n={n}, m={m}), found {}",
                    row.len()
                )));
            }
            x.column_mut(i).copy_from_slice(&row[..n]);
            u.column_mut(i).copy_from_slice(&row[n..n + m]);
            y.column_mut(i).copy_from_slice(&row[n + m..]);
        }
        Ok(SampleSet::new(x, u, y)?.with_meta(meta))
    }
}

pub fn save(s: &SampleSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, s.to_text())?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<SampleSet> {
    SampleSet::parse(&std::fs::read_to_string(path)?)
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let (a, b) = (top.nrows(), bottom.nrows());
    let mut out = DMatrix::zeros(a + b, top.ncols());
    for j in 0..top.ncols() {
        out.view_mut((0, j), (a, 1)).copy_from(&top.column(j));
        out.view_mut((a, j), (b, 1)).copy_from(&bottom.column(j));
    }
    out
}

/// Where the sampled states `xᵢ` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// States used in order, cycling when `M` exceeds the list length.
    FixedList(Vec<Vec<f64>>),
}

impl InitialDistribution {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            InitialDistribution::UniformBox { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(Error::usage(format!("initial box must have dimension {n}")));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::usage("initial box needs finite bounds with lower <= upper"));
                }
            }
            InitialDistribution::FixedList(states) => {
                if states.is_empty() {
                    return Err(Error::usage("initial state list is empty"));
                }
                if let Some(bad) = states.iter().find(|s| s.len() != n) {
                    return Err(Error::usage(format!(
                        "initial state {bad:?} does not have dimension {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, index: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            InitialDistribution::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..*u) })
                .collect(),
            InitialDistribution::FixedList(states) => states[index % states.len()].clone(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            InitialDistribution::UniformBox { lower, upper } => format!("uniform({lower:?}, {upper:?})"),
            InitialDistribution::FixedList(s) => format!("list({} states)", s.len()),
        }
    }
}

/// Generates `count` transitions. Row `i` uses its own ChaCha stream
/// `(seed, i)`, so the result does not depend on the number of threads.
/// Inputs are `uᵢ = π₀(xᵢ)`.
pub fn generate(
    model: &DynamicsModel,
    policy: &Policy,
    init: &InitialDistribution,
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::validation("sample size M must be at least 1"));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    init.validate(n)?;
    if policy.input_dim() != m {
        return Err(Error::usage(format!(
            "policy produces {}-dimensional inputs, system expects {m}",
            policy.input_dim()
        )));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = init.draw(i, &mut rng);
            let u = policy.act(0, &x)?;
            let y = model.sample_step(&x, &u, &mut rng)?;
            Ok((x, u, y))
        })
        .collect::<Result<_>>()?;
    let mut xs = DMatrix::zeros(n, count);
    let mut us = DMatrix::zeros(m, count);
    let mut ys = DMatrix::zeros(n, count);
    for (i, (x, u, y)) in rows.into_iter().enumerate() {
        xs.column_mut(i).copy_from_slice(&x);
        us.column_mut(i).copy_from_slice(&u);
        ys.column_mut(i).copy_from_slice(&y);
    }
    let meta = SampleMeta {
        generator: Some(format!(
            "{} disturbance={} policy={} init={}",
            model.system().describe(),
            model.disturbance().describe(),
            policy.describe(),
            init.describe()
        )),
        seed: Some(seed),
    };
    Ok(SampleSet::new(xs, us, ys)?.with_meta(meta))
}
