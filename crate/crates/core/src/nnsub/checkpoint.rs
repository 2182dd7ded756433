//! Parameter checkpoints: a JSON manifest `{key: {shape, offset}}` followed
//! by one little-endian `f32` blob (see [`crate::container`]).
//!
//! Adam moments are saved as extra tensors `<key>#adam_m` / `<key>#adam_v`
//! and step counters in the manifest, so training resumes exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::ParamEntry;
use super::{ParamStore, Tensor};
use crate::container;
use crate::error::{Error, Result};

const FORMAT: &str = "paegan-params-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tensors: BTreeMap<String, TensorInfo>,
    pub trainable: BTreeMap<String, bool>,
    pub adam_steps: BTreeMap<String, u64>,
}

const M_SUFFIX: &str = "#adam_m";
const V_SUFFIX: &str = "#adam_v";

fn flatten(store: &ParamStore<f32>) -> (Manifest, Vec<f32>) {
    let mut tensors = BTreeMap::new();
    let mut trainable = BTreeMap::new();
    let mut adam_steps = BTreeMap::new();
    let mut blob = Vec::new();
    let mut push = |key: String, t: &Tensor<f32>, blob: &mut Vec<f32>| {
        tensors.insert(
            key,
            TensorInfo {
                shape: t.shape().to_vec(),
                offset: blob.len() * 4,
            },
        );
        blob.extend_from_slice(t.data());
    };
    for (k, e) in store.iter() {
        push(k.to_string(), &e.value, &mut blob);
        trainable.insert(k.to_string(), e.trainable);
        if e.trainable {
            push(format!("{k}{M_SUFFIX}"), &e.m, &mut blob);
            push(format!("{k}{V_SUFFIX}"), &e.v, &mut blob);
            adam_steps.insert(k.to_string(), e.step);
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        tensors,
        trainable,
        adam_steps,
    };
    (manifest, blob)
}

pub fn to_bytes(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let (m, blob) = flatten(store);
    container::encode(&m, &blob)
}

pub fn save(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let (m, blob) = flatten(store);
    container::write(path, &m, &blob)
}

pub fn load(path: &Path) -> Result<ParamStore<f32>> {
    let (m, blob): (Manifest, Vec<f32>) = container::read(path)?;
    unflatten(path, m, &blob)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let path = Path::new("<memory>");
    let (m, blob): (Manifest, Vec<f32>) = container::decode(path, bytes)?;
    unflatten(path, m, &blob)
}

fn unflatten(path: &Path, m: Manifest, blob: &[f32]) -> Result<ParamStore<f32>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if m.format != FORMAT {
        return Err(bad(format!("unexpected format tag {:?}", m.format)));
    }
    let read = |key: &str| -> Result<Tensor<f32>> {
        let info = m
            .tensors
            .get(key)
            .ok_or_else(|| bad(format!("missing tensor {key}")))?;
        let n: usize = info.shape.iter().product();
        if info.offset % 4 != 0 {
            return Err(bad(format!("misaligned tensor {key}")));
        }
        let start = info.offset / 4;
        let data = blob
            .get(start..start + n)
            .ok_or_else(|| bad(format!("tensor {key} runs past the blob")))?;
        Tensor::new(&info.shape, data.to_vec())
    };
    let mut store = ParamStore::new();
    for (key, &trainable) in &m.trainable {
        let value = read(key)?;
        let (mo, vo, step) = if trainable {
            (
                read(&format!("{key}{M_SUFFIX}"))?,
                read(&format!("{key}{V_SUFFIX}"))?,
                *m.adam_steps.get(key).unwrap_or(&0),
            )
        } else {
            (Tensor::zeros(value.shape()), Tensor::zeros(value.shape()), 0)
        };
        store.insert_entry(
            key.clone(),
            ParamEntry {
                grad: Tensor::zeros(value.shape()),
                value: Arc::new(value),
                m: mo,
                v: vo,
                step,
                trainable,
            },
        );
    }
    Ok(store)
}
