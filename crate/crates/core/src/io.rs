//! Dataset CSV parsing and the JSON model envelope.
//!
//! Datasets are UTF-8 CSV with a header row. Required columns: `group`
//! (string), `x` and `y` (real). Optional: `z` (real, dry-day covariate) and
//! `lead_time` (integer hours). Extra columns are ignored.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::model::FittedModel;
use crate::quantreg::PairedSample;
use crate::tail::{CstModel, LinearBaselineModel};
use crate::zeroinfl::{CovariateKind, ZeroInflatedModel};

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("invalid CSV: {0}")]
    Csv(String),
    #[error("invalid model file: {0}")]
    ModelFormat(String),
    #[error("invalid JSON input: {0}")]
    Json(String),
    #[error(transparent)]
    Core(#[from] Error),
}

/// A verification or fitting dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub groups: Vec<String>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub zs: Option<Vec<f64>>,
    pub lead_time: Option<Vec<i64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn sample(&self) -> Result<PairedSample, Error> {
        PairedSample::new(self.xs.clone(), self.ys.clone())
    }
}

/// Prediction inputs: `x` and optionally `z`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Query {
    pub xs: Vec<f64>,
    pub zs: Option<Vec<f64>>,
}

struct Columns(HashMap<String, usize>);

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Columns(
            headers
                .iter()
                .enumerate()
                .map(|(i, h)| (h.trim().to_string(), i))
                .collect(),
        )
    }

    fn required(&self, name: &str) -> Result<usize, IoError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| IoError::MissingColumn(name.into()))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.0.get(name).copied()
    }
}

fn field<'a>(
    rec: &'a csv::StringRecord,
    col: usize,
    name: &str,
    line: u64,
) -> Result<&'a str, IoError> {
    rec.get(col).map(str::trim).ok_or_else(|| IoError::Row {
        line,
        message: format!("missing value for `{name}`"),
    })
}

fn real(rec: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64, IoError> {
    let s = field(rec, col, name, line)?;
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IoError::Row {
            line,
            message: format!("`{name}` is not a finite number: {s:?}"),
        }),
    }
}

fn reader(bytes: &[u8]) -> Result<(csv::Reader<&[u8]>, Columns), IoError> {
    if std::str::from_utf8(bytes).is_err() {
        return Err(IoError::Csv("input is not valid UTF-8".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .clone();
    Ok((rdr, Columns::new(&headers)))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parses a dataset; every row must carry a valid `group`, `x` and `y`.
pub fn read_dataset(bytes: &[u8]) -> Result<Dataset, IoError> {
    let (mut rdr, cols) = reader(bytes)?;
    let (cg, cx, cy) = (
        cols.required("group")?,
        cols.required("x")?,
        cols.required("y")?,
    );
    let (cz, cl) = (cols.optional("z"), cols.optional("lead_time"));
    let mut d = Dataset {
        zs: cz.map(|_| Vec::new()),
        lead_time: cl.map(|_| Vec::new()),
        ..Dataset::default()
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::Csv(e.to_string()))?;
        let line = line_of(&rec);
        let g = field(&rec, cg, "group", line)?;
        if g.is_empty() {
            return Err(IoError::Row {
                line,
                message: "empty `group`".into(),
            });
        }
        d.groups.push(g.to_string());
        d.xs.push(real(&rec, cx, "x", line)?);
        d.ys.push(real(&rec, cy, "y", line)?);
        if let (Some(c), Some(zs)) = (cz, d.zs.as_mut()) {
            zs.push(real(&rec, c, "z", line)?);
        }
        if let (Some(c), Some(ls)) = (cl, d.lead_time.as_mut()) {
            let s = field(&rec, c, "lead_time", line)?;
            ls.push(s.parse().map_err(|_| IoError::Row {
                line,
                message: format!("`lead_time` is not an integer: {s:?}"),
            })?);
        }
    }
    if d.is_empty() {
        return Err(IoError::Csv("dataset has no rows".into()));
    }
    Ok(d)
}

/// Parses prediction inputs; only `x` is required.
pub fn read_query(bytes: &[u8]) -> Result<Query, IoError> {
    let (mut rdr, cols) = reader(bytes)?;
    let cx = cols.required("x")?;
    let cz = cols.optional("z");
    let mut q = Query {
        zs: cz.map(|_| Vec::new()),
        ..Query::default()
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::Csv(e.to_string()))?;
        let line = line_of(&rec);
        q.xs.push(real(&rec, cx, "x", line)?);
        if let (Some(c), Some(zs)) = (cz, q.zs.as_mut()) {
            zs.push(real(&rec, c, "z", line)?);
        }
    }
    Ok(q)
}

pub const MODEL_FORMAT: &str = "cstq-model";
pub const MODEL_VERSION: u32 = 1;

/// Reproduction record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub data_sha256: Option<String>,
    pub data_rows: Option<usize>,
}

impl Provenance {
    pub fn new(
        command: &str,
        seed: u64,
        config: serde_json::Value,
        data: Option<&[u8]>,
        rows: Option<usize>,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            data_sha256: data.map(sha256_hex),
            data_rows: rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cst,
    LinearBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroInflationPart {
    pub intercept: f64,
    pub slope: f64,
    pub covariate_kind: CovariateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineBody {
    pub baseline: LinearBaselineModel,
    pub training: PairedSample,
}

/// Serialized model. A zero-inflated model is a CST model (its positive
/// part) with a `zero_inflation` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEnvelope {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub model: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_inflation: Option<ZeroInflationPart>,
    pub provenance: Provenance,
}

impl ModelEnvelope {
    pub fn wrap(model: &FittedModel, provenance: Provenance) -> Self {
        let to_value =
            |v: serde_json::Result<serde_json::Value>| v.expect("model types serialize to JSON");
        let (kind, model, zero_inflation) = match model {
            FittedModel::Cst(m) => (ModelKind::Cst, to_value(serde_json::to_value(m)), None),
            FittedModel::ZeroInflated(m) => (
                ModelKind::Cst,
                to_value(serde_json::to_value(&m.positive_model)),
                Some(ZeroInflationPart {
                    intercept: m.intercept,
                    slope: m.slope,
                    covariate_kind: m.covariate_kind,
                }),
            ),
            FittedModel::LinearBaseline { model, training } => (
                ModelKind::LinearBaseline,
                to_value(serde_json::to_value(BaselineBody {
                    baseline: model.clone(),
                    training: training.clone(),
                })),
                None,
            ),
        };
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind,
            model,
            zero_inflation,
            provenance,
        }
    }

    /// Decodes and validates the model.
    pub fn unwrap_model(&self) -> Result<FittedModel, IoError> {
        if self.format != MODEL_FORMAT {
            return Err(IoError::ModelFormat(format!(
                "unexpected format {:?}",
                self.format
            )));
        }
        if self.version != MODEL_VERSION {
            return Err(IoError::ModelFormat(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let bad = |e: serde_json::Error| IoError::ModelFormat(e.to_string());
        let m = match (self.kind, &self.zero_inflation) {
            (ModelKind::Cst, None) => FittedModel::Cst(
                serde_json::from_value::<CstModel>(self.model.clone()).map_err(bad)?,
            ),
            (ModelKind::Cst, Some(z)) => FittedModel::ZeroInflated(ZeroInflatedModel {
                intercept: z.intercept,
                slope: z.slope,
                positive_model: serde_json::from_value(self.model.clone()).map_err(bad)?,
                covariate_kind: z.covariate_kind,
            }),
            (ModelKind::LinearBaseline, None) => {
                let b: BaselineBody = serde_json::from_value(self.model.clone()).map_err(bad)?;
                FittedModel::LinearBaseline {
                    model: b.baseline,
                    training: b.training,
                }
            }
            (ModelKind::LinearBaseline, Some(_)) => {
                return Err(IoError::ModelFormat(
                    "zero inflation is only defined for CST models".into(),
                ))
            }
        };
        m.validate()
            .map_err(|e| IoError::ModelFormat(e.to_string()))?;
        Ok(m)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, IoError> {
        serde_json::from_slice(bytes).map_err(|e| IoError::ModelFormat(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("envelope serializes");
        s.push('\n');
        s
    }
}
