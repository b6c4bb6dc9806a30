//! Shared container layout for checkpoints, adapters and importance files:
//! an 8-byte magic, a little-endian `u64` header length, a UTF-8 JSON
//! header, then raw little-endian IEEE-754 payloads.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{DType, Float};

pub const PREAMBLE: usize = 16;

/// Location of one payload relative to the start of the payload section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        (self.numel() * self.dtype.width()) as u64
    }
}

pub fn encode_values<T: Float>(values: &[T], dtype: DType, out: &mut Vec<u8>) {
    out.reserve(values.len() * dtype.width());
    for &v in values {
        match dtype {
            DType::Binary16 => {
                out.extend_from_slice(&half::f16::from_f64(v.as_f64()).to_le_bytes())
            }
            DType::Binary32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            DType::Binary64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
}

pub fn decode_values<T: Float>(bytes: &[u8], dtype: DType) -> Vec<T> {
    match dtype {
        DType::Binary16 => bytes
            .chunks_exact(2)
            .map(|c| T::from_f64_lossy(half::f16::from_le_bytes([c[0], c[1]]).to_f64()))
            .collect(),
        DType::Binary32 => bytes
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        DType::Binary64 => bytes
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
    }
}

/// Lays out `payloads` back to back and returns their manifest.
pub fn build_payload<T: Float>(
    payloads: &[(String, Vec<usize>, &[T])],
    dtype: DType,
) -> (Vec<ManifestEntry>, Vec<u8>) {
    let mut bytes = Vec::new();
    let manifest = payloads
        .iter()
        .map(|(name, shape, data)| {
            let offset = bytes.len() as u64;
            encode_values(data, dtype, &mut bytes);
            ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
                dtype,
                offset,
            }
        })
        .collect();
    (manifest, bytes)
}

pub fn write_container(magic: &[u8; 8], header: &impl Serialize, payload: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
    out.write_all(magic)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(payload)?;
    Ok(out)
}

/// Parsed container: header plus the payload section it describes.
pub struct Container<'a, H> {
    pub header: H,
    pub payload: &'a [u8],
    pub payload_offset: u64,
}

pub fn read_container<'a, H: DeserializeOwned>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<Container<'a, H>> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::format(
            0,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::format(8, "truncated header length"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = PREAMBLE
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(PREAMBLE as u64, format!("header of {len} bytes truncated")))?;
    let header = serde_json::from_slice(&bytes[PREAMBLE..end])
        .map_err(|e| Error::format(PREAMBLE as u64, format!("invalid header: {e}")))?;
    Ok(Container {
        header,
        payload: &bytes[end..],
        payload_offset: end as u64,
    })
}

/// Checks that entries are contiguous, non-overlapping, and fit the payload.
pub fn check_manifest(manifest: &[ManifestEntry], payload_len: usize, payload_offset: u64) -> Result<()> {
    let mut expected = 0u64;
    for e in manifest {
        if e.offset != expected {
            return Err(Error::format(
                payload_offset + e.offset,
                format!("payload {} at offset {} but expected {expected}", e.name, e.offset),
            ));
        }
        expected += e.byte_len();
    }
    if expected as usize > payload_len {
        return Err(Error::format(
            payload_offset + payload_len as u64,
            format!("payload truncated: need {expected} bytes, found {payload_len}"),
        ));
    }
    if (expected as usize) < payload_len {
        return Err(Error::format(
            payload_offset + expected,
            format!("{} trailing bytes after payload", payload_len - expected as usize),
        ));
    }
    Ok(())
}

pub fn entry_values<T: Float>(payload: &[u8], e: &ManifestEntry) -> Vec<T> {
    let start = e.offset as usize;
    decode_values(&payload[start..start + e.byte_len() as usize], e.dtype)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
