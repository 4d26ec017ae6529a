//! Named parameter storage, per-graph bindings, and checkpoint files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numerics::{GradSink, Graph, LstmParams, LstmVars, NumericsError, Tensor, Var};

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` already present")]
    Duplicate { name: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// All trainable tensors of a model, keyed by dotted names. Iteration
/// order is the sorted name order, which makes optimizers and checkpoint
/// files deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), ParamError> {
        if self.entries.contains_key(name) {
            return Err(ParamError::Duplicate { name: name.into() });
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.entries
            .get(name)
            .ok_or_else(|| ParamError::Missing(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ParamError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| ParamError::Missing(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Splits LSTM weights into the store under `{prefix}.{gate}`.
    pub fn insert_lstm(&mut self, prefix: &str, p: &LstmParams) -> Result<(), ParamError> {
        for (gate, tensor) in p.named_tensors() {
            self.insert(&format!("{prefix}.{gate}"), tensor.clone())?;
        }
        Ok(())
    }
}

/// Parameter-to-tape bindings for one graph. Binding the same name twice
/// returns the same leaf, so batched examples share parameter nodes and
/// gradients accumulate on them.
#[derive(Default)]
pub struct Binding {
    by_name: BTreeMap<String, Var>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(
        &mut self,
        g: &mut Graph,
        store: &ParamStore,
        name: &str,
    ) -> Result<Var, ParamError> {
        if let Some(v) = self.by_name.get(name) {
            return Ok(*v);
        }
        let t = store.get(name)?;
        let v = g.leaf(t.shape(), t.values())?;
        self.by_name.insert(name.to_string(), v);
        Ok(v)
    }

    /// Binds the 8 tensors of an LSTM stored under `prefix`.
    pub fn bind_lstm(
        &mut self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<LstmVars, ParamError> {
        Ok(LstmVars {
            input_dim,
            hidden_dim,
            w_input: self.bind(g, store, &format!("{prefix}.w_input"))?,
            b_input: self.bind(g, store, &format!("{prefix}.b_input"))?,
            w_forget: self.bind(g, store, &format!("{prefix}.w_forget"))?,
            b_forget: self.bind(g, store, &format!("{prefix}.b_forget"))?,
            w_cell: self.bind(g, store, &format!("{prefix}.w_cell"))?,
            b_cell: self.bind(g, store, &format!("{prefix}.b_cell"))?,
            w_output: self.bind(g, store, &format!("{prefix}.w_output"))?,
            b_output: self.bind(g, store, &format!("{prefix}.b_output"))?,
        })
    }

    /// Collects gradients from a finished backward pass, keyed by name.
    pub fn collect(&self, sink: &GradSink) -> GradMap {
        let mut map = BTreeMap::new();
        for (name, var) in &self.by_name {
            if let Some(g) = sink.get(*var) {
                map.insert(name.clone(), g.to_vec());
            }
        }
        GradMap { map }
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct GradMap {
    map: BTreeMap<String, Vec<f64>>,
}

impl GradMap {
    pub fn from_map(map: BTreeMap<String, Vec<f64>>) -> Self {
        GradMap { map }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Merges another gradient map by element-wise addition.
    pub fn merge(&mut self, other: GradMap) {
        for (name, grad) in other.map {
            match self.map.get_mut(&name) {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
                None => {
                    self.map.insert(name, grad);
                }
            }
        }
    }
}

// ── Checkpoint files ───────────────────────────────────────────────
//
// Layout: u32 LE header length, then a JSON header
// {"format_version", "config", "seed", "tensors": [{"name", "shape"}]},
// then each tensor's values as little-endian f32 in header order.

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: serde_json::Value,
    seed: u64,
    tensors: Vec<TensorMeta>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(
    path: &Path,
    config: &serde_json::Value,
    seed: u64,
    store: &ParamStore,
) -> Result<(), ParamError> {
    let header = CheckpointHeader {
        format_version: 1,
        config: config.clone(),
        seed,
        tensors: store
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| ParamError::Malformed(format!("header encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in store.iter() {
        for v in t.values() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, u64, ParamStore), ParamError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ParamError::Malformed(format!("header decode: {e}")))?;
    if header.format_version != 1 {
        return Err(ParamError::Malformed(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut store = ParamStore::new();
    for meta in &header.tensors {
        let numel: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf)
            .map_err(|_| ParamError::Malformed(format!("truncated payload at `{}`", meta.name)))?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut t = Tensor::new(meta.shape.clone(), values)?;
        t.requires_grad = true;
        store.insert(&meta.name, t)?;
    }
    Ok((header.config, header.seed, store))
}
