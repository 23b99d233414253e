//! Model file layout: 8-byte magic, u32 format version, u32 header length,
//! JSON header (architecture, seed, feature count), then little-endian f64
//! parameters.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LinearModel, LogisticModel, Mlp, Model, ModelKind, PredictiveFunction};
use crate::data::Task;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"XRMODEL\0";
pub const MODEL_FILE_VERSION: u32 = 1;

/// Owned copy of a model that has a file representation.
#[derive(Debug, Clone)]
pub enum Persisted {
    Mlp(Mlp),
    Linear(LinearModel),
    Logistic(LogisticModel),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    task: Task,
    n_features: usize,
    hidden: usize,
    seed: u64,
    target_mean: f64,
    target_scale: f64,
    n_params: usize,
}

fn parts(p: Persisted) -> (Header, Vec<f64>) {
    match p {
        Persisted::Mlp(m) => {
            let mut params = m.w1;
            params.extend(&m.b1);
            params.extend(&m.w2);
            params.push(m.b2);
            (
                Header {
                    kind: ModelKind::Mlp,
                    task: m.task,
                    n_features: m.n_inputs,
                    hidden: m.hidden,
                    seed: m.seed,
                    target_mean: m.target_mean,
                    target_scale: m.target_scale,
                    n_params: params.len(),
                },
                params,
            )
        }
        Persisted::Linear(LinearModel { weights, bias }) => linear_parts(ModelKind::Linear, Task::Regression, weights, bias),
        Persisted::Logistic(LogisticModel { weights, bias }) => {
            linear_parts(ModelKind::Logistic, Task::Classification, weights, bias)
        }
    }
}

fn linear_parts(kind: ModelKind, task: Task, weights: Vec<f64>, bias: f64) -> (Header, Vec<f64>) {
    let n_features = weights.len();
    let mut params = weights;
    params.push(bias);
    (
        Header {
            kind,
            task,
            n_features,
            hidden: 0,
            seed: 0,
            target_mean: 0.0,
            target_scale: 1.0,
            n_params: params.len(),
        },
        params,
    )
}

/// Writes an MLP, linear or logistic model.
pub fn save_model(model: &dyn Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let persisted = model.to_persisted().ok_or_else(|| Error::Unsupported {
        kind: model.kind().as_str().into(),
        what: "persistence".into(),
    })?;
    let (header, params) = parts(persisted);
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PredictiveFunction> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::ModelFile(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_FILE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_bytes = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    let body = &bytes[16 + hlen..];
    if body.len() != header.n_params * 8 {
        return Err(bad("parameter block size mismatch"));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (d, h) = (header.n_features, header.hidden);
    match header.kind {
        ModelKind::Mlp => {
            if params.len() != h * d + 2 * h + 1 {
                return Err(bad("architecture does not match parameter count"));
            }
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h);
            Ok(Arc::new(Mlp {
                task: header.task,
                n_inputs: d,
                hidden: h,
                w1: w1.to_vec(),
                b1: b1.to_vec(),
                w2: w2.to_vec(),
                b2: b2[0],
                target_mean: header.target_mean,
                target_scale: header.target_scale,
                seed: header.seed,
            }))
        }
        ModelKind::Linear | ModelKind::Logistic if params.len() == d + 1 => {
            let (w, b) = params.split_at(d);
            if header.kind == ModelKind::Linear {
                Ok(Arc::new(LinearModel::new(w.to_vec(), b[0])))
            } else {
                Ok(Arc::new(LogisticModel::new(w.to_vec(), b[0])))
            }
        }
        other => Err(bad(&format!("cannot load kind '{}'", other.as_str()))),
    }
}
