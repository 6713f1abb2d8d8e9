//! Linear and logistic regression gradient oracles.
//!
//! Covariates are drawn from N(0, I_d). The synthetic oracles do not satisfy
//! bounded gradient noise; nothing here enforces it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sgd::GradientOracle;

/// `d` points evenly spaced on [0, 1], endpoints included; `(0.5)` for d = 1.
pub fn linspace_params(d: usize) -> Result<Vec<f64>> {
    match d {
        0 => Err(Error::InvalidDimension(0)),
        1 => Ok(vec![0.5]),
        _ => Ok((0..d).map(|k| k as f64 / (d - 1) as f64).collect()),
    }
}

/// One observation: covariates `a` and response `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub a: Vec<f64>,
    pub b: f64,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(u, v)| u * v).sum()
}

/// Gradient of `(b - xᵀa)²`, i.e. `-2(b - xᵀa) a`.
pub fn linear_gradient(x: &[f64], sample: &Sample, out: &mut [f64]) {
    let c = -2.0 * (sample.b - dot(x, &sample.a));
    for (o, a) in out.iter_mut().zip(&sample.a) {
        *o = c * a;
    }
}

/// Gradient of `log(1 + exp(-b xᵀa))`, i.e. `-b a / (1 + exp(b xᵀa))`.
pub fn logistic_gradient(x: &[f64], sample: &Sample, out: &mut [f64]) {
    let c = -sample.b / (1.0 + (sample.b * dot(x, &sample.a)).exp());
    for (o, a) in out.iter_mut().zip(&sample.a) {
        *o = c * a;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logistic,
}

impl ModelKind {
    pub fn gradient(self, x: &[f64], sample: &Sample, out: &mut [f64]) {
        match self {
            ModelKind::Linear => linear_gradient(x, sample, out),
            ModelKind::Logistic => logistic_gradient(x, sample, out),
        }
    }

    /// Synthetic oracle for this model family around `x_star`.
    pub fn oracle(self, x_star: Vec<f64>) -> SyntheticOracle {
        SyntheticOracle::new(self, x_star)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "logistic" => Ok(ModelKind::Logistic),
            other => Err(Error::InvalidParameter(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }
}

/// Fresh sample per call, drawn from the run's stream.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    kind: ModelKind,
    x_star: Vec<f64>,
    sample: Sample,
}

impl SyntheticOracle {
    pub fn new(kind: ModelKind, x_star: Vec<f64>) -> Self {
        let d = x_star.len();
        Self {
            kind,
            x_star,
            sample: Sample {
                a: vec![0.0; d],
                b: 0.0,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    /// Draws `a ~ N(0, I)` then the response.
    pub fn draw_sample(&mut self, stream: &mut RandomStream) -> &Sample {
        stream.fill_std_normal(&mut self.sample.a);
        let eta = dot(&self.x_star, &self.sample.a);
        self.sample.b = match self.kind {
            ModelKind::Linear => eta + stream.std_normal(),
            ModelKind::Logistic => {
                if stream.uniform() < 1.0 / (1.0 + (-eta).exp()) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        &self.sample
    }
}

impl GradientOracle for SyntheticOracle {
    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn gradient(&mut self, x: &[f64], stream: &mut RandomStream, out: &mut [f64]) -> Result<()> {
        self.draw_sample(stream);
        self.kind.gradient(x, &self.sample, out);
        Ok(())
    }
}

pub fn linear_oracle(x_star: Vec<f64>) -> SyntheticOracle {
    SyntheticOracle::new(ModelKind::Linear, x_star)
}

pub fn logistic_oracle(x_star: Vec<f64>) -> SyntheticOracle {
    SyntheticOracle::new(ModelKind::Logistic, x_star)
}

/// Replays a fixed sample sequence, one row per SGD step. Ignores the stream.
#[derive(Debug, Clone)]
pub struct ReplayOracle {
    kind: ModelKind,
    rows: Vec<Sample>,
    next: usize,
}

impl ReplayOracle {
    pub fn new(kind: ModelKind, rows: Vec<Sample>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.a.len());
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if let Some(bad) = rows.iter().find(|r| r.a.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.a.len(),
            });
        }
        Ok(Self {
            kind,
            rows,
            next: 0,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn consumed(&self) -> usize {
        self.next
    }

    pub fn rewind(&mut self) {
        self.next = 0;
    }
}

impl GradientOracle for ReplayOracle {
    fn dim(&self) -> usize {
        self.rows[0].a.len()
    }

    fn gradient(&mut self, x: &[f64], _stream: &mut RandomStream, out: &mut [f64]) -> Result<()> {
        let Some(sample) = self.rows.get(self.next) else {
            return Err(Error::ExhaustedData {
                requested: self.next + 1,
                available: self.rows.len(),
            });
        };
        self.kind.gradient(x, sample, out);
        self.next += 1;
        Ok(())
    }
}

/// Reads a CSV with header `a_1,…,a_d,b`. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn ingest_csv(path: impl AsRef<Path>, kind: ModelKind) -> Result<ReplayOracle> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::ParseError(format!("{}: header: {e}", path.display())))?
        .clone();
    let d = check_header(&headers)?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::ParseError(format!("row {row}: {e}")))?;
        if record.len() != d + 1 {
            return Err(Error::ParseError(format!(
                "row {row}: expected {} fields, found {}",
                d + 1,
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(d + 1);
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::ParseError(format!(
                    "row {row}, column {} ({}): cannot parse {field:?} as a number",
                    j + 1,
                    &headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::ParseError(format!(
                    "row {row}, column {} ({}): non-finite value",
                    j + 1,
                    &headers[j]
                )));
            }
            values.push(v);
        }
        let b = values.pop().expect("record has d + 1 fields");
        if kind == ModelKind::Logistic && b != 1.0 && b != -1.0 {
            return Err(Error::LabelDomainError { row, label: b });
        }
        rows.push(Sample { a: values, b });
    }
    if rows.is_empty() {
        return Err(Error::ParseError(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    ReplayOracle::new(kind, rows)
}

fn check_header(headers: &csv::StringRecord) -> Result<usize> {
    let n = headers.len();
    if n < 2 {
        return Err(Error::ParseError(format!(
            "header needs columns a_1..a_d,b; found {n} column(s)"
        )));
    }
    for (j, name) in headers.iter().enumerate() {
        let expected = if j + 1 == n {
            "b".to_string()
        } else {
            format!("a_{}", j + 1)
        };
        if name != expected {
            return Err(Error::ParseError(format!(
                "header column {}: expected {expected:?}, found {name:?}",
                j + 1
            )));
        }
    }
    Ok(n - 1)
}
