//! Feedforward network controllers and their plain-text weight format.
//!
//! ```text
//! layers L
//! rows cols activation        (one header per layer, followed by
//! w11 w12 … w1cols             rows × cols weights in row-major order
//! …                            and then `rows` bias entries)
//! b1 … brows
//! output bang_bang LOW HIGH   (optional trailer; default is continuous)
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// `activation(W·x + b)`; `W` is `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputMode {
    Continuous,
    /// Scalar output mapped to `low` when negative, `high` otherwise.
    BangBang { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output: OutputMode,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>, output: OutputMode) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::validation(format!(
                    "layer {i}: bias length {} does not match {} rows",
                    l.bias.len(),
                    l.weights.nrows()
                )));
            }
            if i > 0 && layers[i - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::validation(format!(
                    "layer {i}: expects {} inputs but layer {} emits {}",
                    l.weights.ncols(),
                    i - 1,
                    layers[i - 1].weights.nrows()
                )));
            }
        }
        if matches!(output, OutputMode::BangBang { .. }) && layers.last().unwrap().weights.nrows() != 1 {
            return Err(Error::validation("bang-bang output requires a scalar output layer"));
        }
        Ok(Mlp { layers, output })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output
    }

    pub fn with_output_mode(mut self, output: OutputMode) -> Result<Self> {
        self.output = output;
        Mlp::new(self.layers, output)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "layers {}", self.layers.len()).unwrap();
        for l in &self.layers {
            let (r, c) = l.weights.shape();
            writeln!(s, "{r} {c} {}", l.activation.name()).unwrap();
            for i in 0..r {
                let row: Vec<String> = (0..c).map(|j| fmt17(l.weights[(i, j)])).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
            let bias: Vec<String> = l.bias.iter().map(|&v| fmt17(v)).collect();
            writeln!(s, "{}", bias.join(" ")).unwrap();
        }
        if let OutputMode::BangBang { low, high } = self.output {
            writeln!(s, "output bang_bang {} {}", fmt17(low), fmt17(high)).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text);
        tokens.expect_word("layers")?;
        let count: usize = tokens.next_parsed("layer count")?;
        if count == 0 {
            return Err(Error::parse(tokens.line(), "layer count must be positive"));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows: usize = tokens.next_parsed("row count")?;
            let cols: usize = tokens.next_parsed("column count")?;
            let act_line = tokens.peek_line();
            let act: Activation = tokens
                .next_token("activation")?
                .parse()
                .map_err(|e: String| Error::parse(act_line, e))?;
            if rows == 0 || cols == 0 {
                return Err(Error::parse(act_line, "layer dimensions must be positive"));
            }
            let mut w = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    w[(i, j)] = tokens.next_parsed("weight")?;
                }
            }
            let mut b = DVector::zeros(rows);
            for i in 0..rows {
                b[i] = tokens.next_parsed("bias")?;
            }
            layers.push(Layer {
                weights: w,
                bias: b,
                activation: act,
            });
        }
        let mut output = OutputMode::Continuous;
        if let Some((line, tok)) = tokens.next_raw() {
            if tok != "output" {
                return Err(Error::parse(line, format!("unexpected token `{tok}`")));
            }
            match tokens.next_token("output mode")? {
                "continuous" => {}
                "bang_bang" => {
                    let low = tokens.next_parsed("bang-bang low value")?;
                    let high = tokens.next_parsed("bang-bang high value")?;
                    output = OutputMode::BangBang { low, high };
                }
                other => return Err(Error::parse(line, format!("unknown output mode `{other}`"))),
            }
            if let Some((line, tok)) = tokens.next_raw() {
                return Err(Error::parse(line, format!("trailing token `{tok}`")));
            }
        }
        Mlp::new(layers, output)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Mlp::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Forward pass; bang-bang networks return the thresholded input.
pub fn mlp_forward(net: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(Error::dim_mismatch("mlp_forward", net.input_dim(), x.len()));
    }
    let mut h = DVector::from_column_slice(x);
    for l in &net.layers {
        let mut next = &l.weights * &h + &l.bias;
        next.apply(|v| *v = l.activation.apply(*v));
        h = next;
    }
    Ok(match net.output {
        OutputMode::Continuous => h.as_slice().to_vec(),
        OutputMode::BangBang { low, high } => vec![if h[0] < 0.0 { low } else { high }],
    })
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Whitespace tokenizer that remembers line numbers (1-based).
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos.saturating_sub(1))
            .map_or(1, |(l, _)| *l)
    }

    fn peek_line(&self) -> usize {
        self.items.get(self.pos).map_or_else(|| self.line(), |(l, _)| *l)
    }

    fn next_raw(&mut self) -> Option<(usize, &'a str)> {
        let t = self.items.get(self.pos).copied();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn next_token(&mut self, what: &str) -> Result<&'a str> {
        let line = self.line();
        self.next_raw()
            .map(|(_, t)| t)
            .ok_or_else(|| Error::parse(line, format!("unexpected end of file, expected {what}")))
    }

    fn next_parsed<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let line = self.peek_line();
        let tok = self.next_token(what)?;
        tok.parse()
            .map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
    }

    fn expect_word(&mut self, word: &str) -> Result<()> {
        let line = self.peek_line();
        let tok = self.next_token(word)?;
        if tok != word {
            return Err(Error::parse(line, format!("expected `{word}`, found `{tok}`")));
        }
        Ok(())
    }
}
