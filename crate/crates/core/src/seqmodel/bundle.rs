use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SeqDims, SeqModel};
use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, SPECIALS};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Semantic,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensors {
    pub embedding: Vec<Vec<f64>>,
    pub cond_weight: Vec<Vec<f64>>,
    pub cond_bias: Vec<f64>,
    pub gate_weight: Vec<Vec<f64>>,
    pub gate_bias: Vec<f64>,
    pub out_weight: Vec<Vec<f64>>,
    pub out_bias: Vec<f64>,
}

/// JSON model file. Floats are written in shortest round-trip form, so a
/// saved model reloads bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    pub role: ModelRole,
    pub feature_dim: usize,
    pub dims: SeqDims,
    /// Tokens by id, specials included.
    pub vocabulary: Vec<String>,
    pub tensors: Tensors,
    /// `reduced_dim x feature_dim` feature projection (spatial models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<Vec<f64>>>,
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

fn flatten(name: &str, m: &[Vec<f64>], n_rows: usize, width: usize, out: &mut Vec<f64>) -> Result<()> {
    if m.len() != n_rows || m.iter().any(|r| r.len() != width) {
        return Err(Error::Bundle(format!("tensor {name} is not {n_rows}x{width}")));
    }
    for r in m {
        out.extend_from_slice(r);
    }
    Ok(())
}

fn vector(name: &str, v: &[f64], len: usize, out: &mut Vec<f64>) -> Result<()> {
    if v.len() != len {
        return Err(Error::Bundle(format!("tensor {name} has length {}, expected {len}", v.len())));
    }
    out.extend_from_slice(v);
    Ok(())
}

impl ModelBundle {
    pub fn new(role: ModelRole, feature_dim: usize, model: &SeqModel, projection: Option<Vec<Vec<f64>>>) -> Self {
        let d = model.dims();
        let l = d.layout();
        let p = model.params();
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            role,
            feature_dim,
            dims: d,
            vocabulary: model.vocab().tokens().to_vec(),
            tensors: Tensors {
                embedding: rows(&p[l.embedding], d.embed_dim),
                cond_weight: rows(&p[l.cond_weight], d.cond_dim),
                cond_bias: p[l.cond_bias].to_vec(),
                gate_weight: rows(&p[l.gate_weight], d.embed_dim + d.hidden_dim),
                gate_bias: p[l.gate_bias].to_vec(),
                out_weight: rows(&p[l.out_weight], d.hidden_dim),
                out_bias: p[l.out_bias].to_vec(),
            },
            projection,
        }
    }

    pub fn seq_model(&self) -> Result<SeqModel> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Bundle(format!("format_version {}", self.format_version)));
        }
        if self.vocabulary.len() < SPECIALS.len() || self.vocabulary[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Bundle("vocabulary must start with the special tokens".into()));
        }
        let vocab = Vocabulary::from_tokens(self.vocabulary[SPECIALS.len()..].iter().cloned())?;
        let d = self.dims;
        let (v, e, h, c) = (d.vocab_size, d.embed_dim, d.hidden_dim, d.cond_dim);
        let t = &self.tensors;
        let mut p = Vec::with_capacity(d.param_count());
        flatten("embedding", &t.embedding, v, e, &mut p)?;
        flatten("cond_weight", &t.cond_weight, h, c, &mut p)?;
        vector("cond_bias", &t.cond_bias, h, &mut p)?;
        flatten("gate_weight", &t.gate_weight, 4 * h, e + h, &mut p)?;
        vector("gate_bias", &t.gate_bias, 4 * h, &mut p)?;
        flatten("out_weight", &t.out_weight, v, h, &mut p)?;
        vector("out_bias", &t.out_bias, v, &mut p)?;
        SeqModel::from_parts(vocab, d, p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Bundle(e.to_string()))
    }

    /// Writes the bundle, creating missing parent directories.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Splits a row-major matrix into rows (used for projection matrices).
pub(crate) fn matrix_rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    rows(flat, width)
}

pub(crate) fn matrix_flat(name: &str, m: &[Vec<f64>], n_rows: usize, width: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_rows * width);
    flatten(name, m, n_rows, width, &mut out)?;
    Ok(out)
}
