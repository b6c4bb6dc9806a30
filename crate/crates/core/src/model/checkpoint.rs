use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::io::{self, ManifestEntry};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NMTCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
    params: Vec<ManifestEntry>,
}

/// Serialises a model (and optionally its vocabulary) to checkpoint bytes.
pub fn to_bytes<T: Float>(model: &Model<T>, vocab: Option<&Vocab>) -> Result<Vec<u8>> {
    let payloads: Vec<(String, Vec<usize>, &[T])> = model
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data()))
        .collect();
    let (manifest, payload) = io::build_payload(&payloads, T::DTYPE);
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        vocab: vocab.map(|v| v.tokens().to_vec()),
        params: manifest,
    };
    io::write_container(CHECKPOINT_MAGIC, &header, &payload)
}

pub fn from_bytes<T: Float>(bytes: &[u8]) -> Result<(Model<T>, Option<Vocab>)> {
    let c = io::read_container::<CheckpointHeader>(CHECKPOINT_MAGIC, bytes)?;
    if c.header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            io::PREAMBLE as u64,
            format!("unsupported checkpoint version {}", c.header.version),
        ));
    }
    io::check_manifest(&c.header.params, c.payload.len(), c.payload_offset)?;
    let mut params = IndexMap::with_capacity(c.header.params.len());
    for e in &c.header.params {
        let data = io::entry_values(c.payload, e);
        params.insert(e.name.clone(), Tensor::from_vec(e.shape.clone(), data)?);
    }
    let model = Model::from_params(c.header.config, params)?;
    let vocab = c.header.vocab.map(Vocab::from_tokens).transpose()?;
    Ok((model, vocab))
}

pub fn save<T: Float>(model: &Model<T>, vocab: Option<&Vocab>, path: &Path) -> Result<String> {
    let bytes = to_bytes(model, vocab)?;
    std::fs::write(path, &bytes)?;
    Ok(io::sha256_hex(&bytes))
}

/// Loads a checkpoint and returns it with the SHA-256 of the file.
pub fn load<T: Float>(path: &Path) -> Result<(Model<T>, Option<Vocab>, String)> {
    let bytes = std::fs::read(path)?;
    let (m, v) = from_bytes(&bytes)?;
    Ok((m, v, io::sha256_hex(&bytes)))
}

/// Content hash of the parameters and config (vocabulary excluded).
pub fn model_hash<T: Float>(model: &Model<T>) -> String {
    io::sha256_hex(&to_bytes(model, None).expect("in-memory serialisation"))
}
