use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ManifestEntry};
use crate::tensor::{DType, Float, Tensor};

/// Low-rank factor pair `(X[p×r], Y[q×r])` for one target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair<T: Float = f32> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

impl<T: Float> FactorPair<T> {
    pub fn new(x: Tensor<T>, y: Tensor<T>) -> Result<Self> {
        let (_, rx) = x.dims2()?;
        let (_, ry) = y.dims2()?;
        if rx != ry {
            return Err(Error::Dimension {
                op: "factor pair",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn p(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn q(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.x.shape()[1]
    }

    /// Scalar count of both factors.
    pub fn numel(&self) -> usize {
        self.x.len() + self.y.len()
    }
}

/// Ordered map from target parameter name to its factor pair.
pub type FactorMap<T> = IndexMap<String, FactorPair<T>>;

/// One target in a factor file: `X` then `Y` stored back to back at `offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub name: String,
    pub p: usize,
    pub q: usize,
    pub dtype: DType,
    pub offset: u64,
}

pub(crate) fn encode_factors<T: Float>(
    entries: &FactorMap<T>,
    rank: usize,
    dtype: DType,
) -> (Vec<TargetEntry>, Vec<u8>) {
    let mut bytes = Vec::new();
    let targets = entries
        .iter()
        .map(|(name, f)| {
            let offset = bytes.len() as u64;
            io::encode_values(f.x.data(), dtype, &mut bytes);
            io::encode_values(f.y.data(), dtype, &mut bytes);
            debug_assert_eq!(f.rank(), rank);
            TargetEntry {
                name: name.clone(),
                p: f.p(),
                q: f.q(),
                dtype,
                offset,
            }
        })
        .collect();
    (targets, bytes)
}

pub(crate) fn decode_factors<T: Float>(
    targets: &[TargetEntry],
    rank: usize,
    payload: &[u8],
    payload_offset: u64,
) -> Result<FactorMap<T>> {
    if rank == 0 {
        return Err(Error::format(io::PREAMBLE as u64, "rank must be at least 1"));
    }
    let manifest: Vec<ManifestEntry> = targets
        .iter()
        .flat_map(|t| {
            let y_offset = t.offset + (t.p * rank * t.dtype.width()) as u64;
            [
                ManifestEntry {
                    name: format!("{}.X", t.name),
                    shape: vec![t.p, rank],
                    dtype: t.dtype,
                    offset: t.offset,
                },
                ManifestEntry {
                    name: format!("{}.Y", t.name),
                    shape: vec![t.q, rank],
                    dtype: t.dtype,
                    offset: y_offset,
                },
            ]
        })
        .collect();
    io::check_manifest(&manifest, payload.len(), payload_offset)?;
    let mut out = FactorMap::with_capacity(targets.len());
    for (t, pair) in targets.iter().zip(manifest.chunks_exact(2)) {
        let x = Tensor::from_vec(pair[0].shape.clone(), io::entry_values(payload, &pair[0]))
            .map_err(|e| Error::format(payload_offset + t.offset, e.to_string()))?;
        let y = Tensor::from_vec(pair[1].shape.clone(), io::entry_values(payload, &pair[1]))
            .map_err(|e| Error::format(payload_offset + pair[1].offset, e.to_string()))?;
        if out.insert(t.name.clone(), FactorPair { x, y }).is_some() {
            return Err(Error::format(payload_offset + t.offset, format!("duplicate target {}", t.name)));
        }
    }
    Ok(out)
}
