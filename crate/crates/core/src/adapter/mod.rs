//! LoRA adapters: per-target factor pairs whose product `XYᵀ` is a weight delta.

mod factors;


use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use factors::{FactorMap, FactorPair, TargetEntry};
pub(crate) use factors::{decode_factors, encode_factors};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Binder, DynamicFactor, Model, TargetSelector, WeightOverrides};
use crate::tensor::{DType, Float, Tape, Tensor, Var};

pub const ADAPTER_MAGIC: &[u8; 8] = b"LORA0001";
pub const ADAPTER_VERSION: u32 = 1;
/// Standard deviation of the Gaussian used for `X` at creation.
pub const INIT_STD: f64 = 0.02;

/// Where an adapter came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_hash: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeDirection {
    Apply,
    Revert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoRAAdapter<T: Float = f32> {
    pub task_name: String,
    rank: usize,
    entries: FactorMap<T>,
    pub default_lambda: f64,
    pub created_from: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterHeader {
    version: u32,
    task_name: String,
    rank: usize,
    default_lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_from: Option<String>,
    #[serde(default)]
    provenance: Provenance,
    targets: Vec<TargetEntry>,
}

fn check_rank(name: &str, p: usize, q: usize, r: usize) -> Result<()> {
    let cap = p.min(q);
    if r > cap {
        return Err(Error::config(format!(
            "rank {r} exceeds min(p, q) = {cap} for {name} [{p}×{q}]"
        )));
    }
    if r == cap {
        tracing::warn!(target = name, rank = r, "rank equals min(p, q); adapter is full rank");
    }
    Ok(())
}

impl<T: Float> LoRAAdapter<T> {
    /// Fresh adapter over the matrices picked by `sel`: `X ~ N(0, 0.02²)`,
    /// `Y = 0`, so the initial delta is exactly zero.
    pub fn init(model: &Model<T>, sel: &TargetSelector, rank: usize, seed: u64, task_name: &str) -> Result<Self> {
        if rank == 0 {
            return Err(Error::config("rank must be at least 1"));
        }
        let names = model.select(sel);
        if names.is_empty() {
            return Err(Error::config(format!("selector `{sel}` matches no 2-D parameter")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = FactorMap::with_capacity(names.len());
        for name in names {
            let (p, q) = model.param(&name)?.dims2()?;
            check_rank(&name, p, q, rank)?;
            let x = Tensor::randn([p, rank], INIT_STD, &mut rng);
            let y = Tensor::zeros([q, rank]);
            entries.insert(name, FactorPair { x, y });
        }
        Ok(Self {
            task_name: task_name.to_string(),
            rank,
            entries,
            default_lambda: 1.0,
            created_from: None,
            provenance: Provenance {
                base_hash: None,
                seed,
            },
        })
    }

    /// Adapter from explicit factors; every pair must share `rank`.
    pub fn from_entries(task_name: &str, rank: usize, entries: FactorMap<T>) -> Result<Self> {
        if rank == 0 || entries.is_empty() {
            return Err(Error::config("adapter needs rank ≥ 1 and at least one target"));
        }
        for (name, f) in &entries {
            if f.rank() != rank || f.y.shape()[1] != rank {
                return Err(Error::config(format!(
                    "{name}: factor rank {} differs from adapter rank {rank}",
                    f.rank()
                )));
            }
            check_rank(name, f.p(), f.q(), rank)?;
        }
        Ok(Self {
            task_name: task_name.to_string(),
            rank,
            entries,
            default_lambda: 1.0,
            created_from: None,
            provenance: Provenance::default(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn entries(&self) -> &FactorMap<T> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut FactorMap<T> {
        &mut self.entries
    }

    pub fn entry(&self, target: &str) -> Result<&FactorPair<T>> {
        self.entries
            .get(target)
            .ok_or_else(|| Error::lookup("adapter target", target))
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Σ r·(p+q) over all targets.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|f| self.rank * (f.p() + f.q())).sum()
    }

    /// `X·Yᵀ` for one target.
    pub fn delta(&self, target: &str) -> Result<Tensor<T>> {
        let f = self.entry(target)?;
        f.x.matmul_nt(&f.y)
    }

    pub fn cast<U: Float>(&self) -> LoRAAdapter<U> {
        LoRAAdapter {
            task_name: self.task_name.clone(),
            rank: self.rank,
            entries: self
                .entries
                .iter()
                .map(|(k, f)| (k.clone(), FactorPair { x: f.x.cast(), y: f.y.cast() }))
                .collect(),
            default_lambda: self.default_lambda,
            created_from: self.created_from.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Checks every target exists in `model` with shape `[p×q]`.
    pub fn check_compatible(&self, model: &Model<T>) -> Result<()> {
        for (name, f) in &self.entries {
            let w = model
                .param(name)
                .map_err(|_| Error::Compatibility(format!("base model has no parameter {name}")))?;
            if w.shape() != [f.p(), f.q()] {
                return Err(Error::Compatibility(format!(
                    "{name}: adapter delta [{}×{}] vs base {:?}",
                    f.p(),
                    f.q(),
                    w.shape()
                )));
            }
        }
        Ok(())
    }

    /// `W ± scale·XYᵀ` in place for every target.
    pub fn merge_into(&self, model: &mut Model<T>, scale: f64, direction: MergeDirection) -> Result<()> {
        self.check_compatible(model)?;
        if scale == 0.0 {
            return Ok(());
        }
        let c = T::from_f64_lossy(match direction {
            MergeDirection::Apply => scale,
            MergeDirection::Revert => -scale,
        });
        for name in self.entries.keys() {
            let d = self.delta(name)?;
            model.param_mut(name)?.axpy(c, &d)?;
        }
        Ok(())
    }

    pub fn merged(&self, model: &Model<T>, scale: f64) -> Result<Model<T>> {
        let mut m = model.clone();
        self.merge_into(&mut m, scale, MergeDirection::Apply)?;
        Ok(m)
    }

    /// Effective weights `W + scale·XYᵀ` for the adapter's targets only.
    pub fn overrides(&self, model: &Model<T>, scale: f64) -> Result<WeightOverrides<T>> {
        self.check_compatible(model)?;
        let c = T::from_f64_lossy(scale);
        self.entries
            .keys()
            .map(|name| {
                let mut w = model.param(name)?.clone();
                w.axpy(c, &self.delta(name)?)?;
                Ok((name.clone(), w))
            })
            .collect()
    }

    /// Puts the factors on `tape` and registers them with `binder` so the
    /// forward pass computes `x·W + coef·(x·X)·Yᵀ`. Returns the factor
    /// variables in target order.
    pub fn bind_dynamic(
        &self,
        tape: &mut Tape<T>,
        binder: &mut Binder<'_, T>,
        coef: T,
        trainable: bool,
    ) -> Vec<(String, Var, Var)> {
        self.entries
            .iter()
            .map(|(name, f)| {
                let (x, y) = if trainable {
                    (tape.param(f.x.clone()), tape.param(f.y.clone()))
                } else {
                    (tape.constant(f.x.clone()), tape.constant(f.y.clone()))
                };
                binder.add_dynamic(name, DynamicFactor { x, y, coef });
                (name.clone(), x, y)
            })
            .collect()
    }

    pub fn to_bytes(&self, dtype: DType) -> Result<Vec<u8>> {
        let (targets, payload) = encode_factors(&self.entries, self.rank, dtype);
        let header = AdapterHeader {
            version: ADAPTER_VERSION,
            task_name: self.task_name.clone(),
            rank: self.rank,
            default_lambda: self.default_lambda,
            created_from: self.created_from.clone(),
            provenance: self.provenance.clone(),
            targets,
        };
        io::write_container(ADAPTER_MAGIC, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = io::read_container::<AdapterHeader>(ADAPTER_MAGIC, bytes)?;
        let h = c.header;
        if h.version != ADAPTER_VERSION {
            return Err(Error::format(
                io::PREAMBLE as u64,
                format!("unsupported adapter version {}", h.version),
            ));
        }
        let entries = decode_factors(&h.targets, h.rank, c.payload, c.payload_offset)?;
        if entries.is_empty() {
            return Err(Error::format(c.payload_offset, "adapter has no targets"));
        }
        Ok(Self {
            task_name: h.task_name,
            rank: h.rank,
            entries,
            default_lambda: h.default_lambda,
            created_from: h.created_from,
            provenance: h.provenance,
        })
    }

    /// Writes the adapter and returns the SHA-256 of the file.
    pub fn save(&self, path: &Path, dtype: DType) -> Result<String> {
        let bytes = self.to_bytes(dtype)?;
        std::fs::write(path, &bytes)?;
        Ok(io::sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
