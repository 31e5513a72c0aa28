//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic        8 bytes   b"ATTRCKPT"
//! header_len   u32 LE    length of the JSON header in bytes
//! header       JSON      CheckpointHeader
//! arrays       f32 LE    every parameter array, row-major, in header order
//! ```
//!
//! Loading checks the header's vocabulary hash against the vocabulary the
//! caller supplies.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Architecture, Pooling, ReferenceClassifier, Regime, TaskMode, TrainedModel, Vocabulary};

pub const MAGIC: &[u8; 8] = b"ATTRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub vocabulary_hash: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub task_mode: TaskMode,
    pub pooling: Pooling,
    pub regime: Regime,
    pub label_names: Vec<String>,
    pub final_train_loss: f64,
    pub final_validation_loss: Option<f64>,
    pub arrays: Vec<ArrayHeader>,
}

pub fn encode_checkpoint(model: &TrainedModel) -> Result<Vec<u8>> {
    let arch = model.classifier.architecture();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        vocabulary_hash: model.vocabulary.content_hash(),
        vocab_size: arch.vocab_size,
        embedding_dim: arch.embedding_dim,
        hidden_dim: arch.hidden_dim,
        num_labels: arch.num_labels,
        task_mode: arch.task_mode,
        pooling: arch.pooling,
        regime: model.regime.clone(),
        label_names: model.label_names.clone(),
        final_train_loss: model.final_train_loss,
        final_validation_loss: model.final_validation_loss,
        arrays: arch
            .parameter_shapes()
            .into_iter()
            .map(|(name, (rows, cols))| ArrayHeader {
                name: name.to_string(),
                rows,
                cols,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.classifier.parameters() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], vocabulary: &Vocabulary) -> Result<TrainedModel> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing magic bytes".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.vocabulary_hash != vocabulary.content_hash() {
        return Err(Error::Checkpoint("vocabulary hash does not match the supplied vocabulary".into()));
    }
    let arch = Architecture {
        vocab_size: header.vocab_size,
        embedding_dim: header.embedding_dim,
        hidden_dim: header.hidden_dim,
        num_labels: header.num_labels,
        pooling: header.pooling,
        task_mode: header.task_mode,
    };
    let expected = arch.parameter_shapes();
    if expected.len() != header.arrays.len()
        || expected
            .iter()
            .zip(&header.arrays)
            .any(|((n, (r, c)), a)| *n != a.name || *r != a.rows || *c != a.cols)
    {
        return Err(Error::Checkpoint("array list does not match the declared architecture".into()));
    }
    let mut cursor = 12 + header_len;
    let mut params = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        let n = a.rows * a.cols;
        let raw = bytes
            .get(cursor..cursor + 4 * n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated array {}", a.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.push(Tensor::new(a.rows, a.cols, data));
        cursor += 4 * n;
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter arrays".into()));
    }
    Ok(TrainedModel {
        classifier: ReferenceClassifier::from_parameters(arch, params)?,
        vocabulary: vocabulary.clone(),
        label_names: header.label_names,
        regime: header.regime,
        final_train_loss: header.final_train_loss,
        final_validation_loss: header.final_validation_loss,
        log: Vec::new(),
    })
}

pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, vocabulary: &Vocabulary) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, vocabulary)
}
