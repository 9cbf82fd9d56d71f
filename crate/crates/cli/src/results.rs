//! Results tables: `x1,…,xn,k0,…,kN`, one row per evaluation point.

use std::io::Write;
use std::path::Path;

use srk_core::algorithms::SafetyField;
use srk_core::{Error, Result};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_value(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so a failed run never leaves a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn write_rows(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn field_csv(field: &SafetyField) -> Result<Vec<u8>> {
    let n = field.points().nrows();
    let horizon = field.horizon();
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((0..=horizon).map(|k| format!("k{k}")))
        .collect();
    let rows = (0..field.len()).map(|j| {
        field
            .points()
            .column(j)
            .iter()
            .chain(field.values().column(j).iter())
            .map(|&v| fmt_value(v))
            .collect()
    });
    write_rows(&header, rows)
}

pub fn write_field(path: &Path, field: &SafetyField) -> Result<()> {
    atomic_write(path, &field_csv(field)?)
}

/// A results table read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub state_dim: usize,
    pub horizon: usize,
    /// One entry per row: the point coordinates.
    pub points: Vec<Vec<f64>>,
    /// One entry per row: `V_0, …, V_N`.
    pub values: Vec<Vec<f64>>,
}

impl ResultsTable {
    pub fn initial_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0]).collect()
    }
}

pub fn parse_results(text: &str) -> Result<ResultsTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?.clone();
    let n = header.iter().take_while(|h| h.starts_with('x')).count();
    let steps = header.len() - n;
    let expected = (1..=n).map(|i| format!("x{i}")).chain((0..steps).map(|k| format!("k{k}")));
    if n == 0 || steps == 0 || !header.iter().zip(expected).all(|(h, e)| h == e) {
        return Err(parse_error(1, "header must read x1,…,xn,k0,…,kN"));
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let row = rec
            .iter()
            .map(|t| t.trim().parse::<f64>().map_err(|_| parse_error(line, format!("invalid number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        points.push(row[..n].to_vec());
        values.push(row[n..].to_vec());
    }
    Ok(ResultsTable {
        state_dim: n,
        horizon: steps - 1,
        points,
        values,
    })
}

pub fn read_results(path: &Path) -> Result<ResultsTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_results(&text)
}

/// Absolute `k0` differences between two tables over the same points.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub mean_abs: f64,
    pub max_abs: f64,
    pub diffs: Vec<f64>,
}

pub fn compare_tables(a: &ResultsTable, b: &ResultsTable) -> Result<Comparison> {
    if a.state_dim != b.state_dim || a.points.len() != b.points.len() {
        return Err(Error::Validation(format!(
            "point sets differ: {} points in {} dimensions vs {} points in {} dimensions",
            a.points.len(),
            a.state_dim,
            b.points.len(),
            b.state_dim
        )));
    }
    if let Some(i) = a.points.iter().zip(&b.points).position(|(p, q)| p != q) {
        return Err(Error::Validation(format!("point sets differ at row {}", i + 1)));
    }
    if a.points.is_empty() {
        return Err(Error::Validation("no points to compare".into()));
    }
    let diffs: Vec<f64> = a.values.iter().zip(&b.values).map(|(p, q)| (p[0] - q[0]).abs()).collect();
    let mean_abs = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let max_abs = diffs.iter().copied().fold(0.0, f64::max);
    Ok(Comparison {
        mean_abs,
        max_abs,
        diffs,
    })
}

/// Per-point CSV: coordinates, both `k0` values and their difference.
pub fn comparison_csv(a: &ResultsTable, b: &ResultsTable, c: &Comparison) -> Result<Vec<u8>> {
    let header: Vec<String> = (1..=a.state_dim)
        .map(|i| format!("x{i}"))
        .chain(["k0_a".into(), "k0_b".into(), "abs_diff".into()])
        .collect();
    let rows = (0..a.points.len()).map(|i| {
        a.points[i]
            .iter()
            .chain([a.values[i][0], b.values[i][0], c.diffs[i]].iter())
            .map(|&v| fmt_value(v))
            .collect()
    });
    write_rows(&header, rows)
}
