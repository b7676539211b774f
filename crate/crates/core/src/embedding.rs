//! Instruction embeddings and ratio interpolation between them.
//!
//! A subtask at ratio `r` is conditioned on `r * edit + (1 - r) * null`, where
//! `edit` encodes the full instruction and `null` the empty one.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Default embedding dimension for synthetic runs.
pub const DEFAULT_DIM: usize = 16;

/// Interpolation ratio in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Ratio(f64);

impl Ratio {
    pub const ZERO: Ratio = Ratio(0.0);
    pub const ONE: Ratio = Ratio(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Ratio(value))
        } else {
            Err(Error::Invalid(format!("ratio {value} outside [0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Ratio {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Ratio::new(v)
    }
}

impl From<Ratio> for f64 {
    fn from(r: Ratio) -> f64 {
        r.0
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding must have positive dimension".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite embedding entry {v}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The two interpolation endpoints: the full instruction and the empty prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptPair {
    edit: Embedding,
    null: Embedding,
}

impl PromptPair {
    pub fn new(edit: Embedding, null: Embedding) -> Result<Self> {
        if edit.dim() != null.dim() {
            return Err(Error::dims(edit.dim(), null.dim()));
        }
        Ok(Self { edit, null })
    }

    /// Synthetic pair with a zero null embedding.
    pub fn synthetic(edit: Embedding) -> Self {
        let null = Embedding::zeros(edit.dim());
        Self { edit, null }
    }

    pub fn edit(&self) -> &Embedding {
        &self.edit
    }

    pub fn null(&self) -> &Embedding {
        &self.null
    }

    pub fn dim(&self) -> usize {
        self.edit.dim()
    }

    pub fn interpolate(&self, r: Ratio) -> Embedding {
        interpolate(self, r).expect("pair dimensions are validated at construction")
    }
}

/// `r * edit + (1 - r) * null`, component-wise.
pub fn interpolate(pair: &PromptPair, r: Ratio) -> Result<Embedding> {
    if pair.edit.dim() != pair.null.dim() {
        return Err(Error::dims(pair.edit.dim(), pair.null.dim()));
    }
    let r = r.get();
    let values = pair
        .edit
        .values
        .iter()
        .zip(&pair.null.values)
        .map(|(e, n)| r * e + (1.0 - r) * n)
        .collect();
    Ok(Embedding { values })
}

pub fn save_embeddings(pair: &PromptPair, path: &Path) -> Result<()> {
    let mut out = format!("dim={}\n", pair.dim());
    for emb in [&pair.edit, &pair.null] {
        let line: Vec<String> = emb.values.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn load_embeddings(path: &Path) -> Result<PromptPair> {
    let text = crate::io::read_to_string(path)?;
    parse_embeddings(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

fn parse_embeddings(text: &str) -> std::result::Result<PromptPair, (usize, String)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or((1, "empty file".to_string()))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .ok_or((hline, format!("expected `dim=<D>` header, got `{header}`")))?
        .trim()
        .parse()
        .map_err(|e| (hline, format!("bad dimension: {e}")))?;
    if dim == 0 {
        return Err((hline, "dimension must be positive".into()));
    }

    let mut parsed = Vec::with_capacity(2);
    for which in ["edit", "null"] {
        let (line_no, line) = lines
            .next()
            .ok_or((hline + parsed.len() + 1, format!("missing {which} embedding")))?;
        let values = line
            .split_whitespace()
            .enumerate()
            .map(|(k, tok)| {
                tok.parse::<f64>()
                    .map_err(|e| (line_no, format!("value {k} `{tok}`: {e}")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.len() != dim {
            return Err((
                line_no,
                format!("{which} embedding has {} values, header says {dim}", values.len()),
            ));
        }
        let emb = Embedding::new(values).map_err(|e| (line_no, e.to_string()))?;
        parsed.push(emb);
    }
    if let Some((line_no, _)) = lines.next() {
        return Err((line_no, "trailing data after two embeddings".into()));
    }
    let null = parsed.pop().unwrap();
    let edit = parsed.pop().unwrap();
    Ok(PromptPair { edit, null })
}
