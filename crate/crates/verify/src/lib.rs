//! Helpers for the acceptance suite: a PASS/FAIL report and small statistics.

use std::fmt::Write as _;
use std::time::Instant;

/// One evaluated criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

/// Collects criterion outcomes and renders them one per line.
#[derive(Debug, Default)]
pub struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records and immediately prints a line, so progress shows up even if a
    /// later criterion panics.
    pub fn record(&mut self, id: &str, passed: bool, detail: impl Into<String>) {
        let o = Outcome {
            id: id.to_string(),
            passed,
            detail: detail.into(),
        };
        println!("{}", render(&o));
        self.outcomes.push(o);
    }

    /// Prints an informational line that does not count towards the verdict.
    pub fn note(&self, id: &str, detail: impl AsRef<str>) {
        println!("INFO {id}: {}", detail.as_ref());
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failures(&self) -> Vec<&Outcome> {
        self.outcomes.iter().filter(|o| !o.passed).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let _ = writeln!(s, "{}", render(o));
        }
        let failed = self.failures().len();
        let _ = write!(s, "{} of {} criteria passed", self.outcomes.len() - failed, self.outcomes.len());
        s
    }
}

pub fn render(o: &Outcome) -> String {
    format!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.detail)
}

/// Runs `f` and returns its value with the elapsed wall time in seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
