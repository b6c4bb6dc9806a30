use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{decode_factors, encode_factors, FactorMap, FactorPair, LoRAAdapter};
use crate::data::{Batch, EncodedPair};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{Binder, Model};
use crate::tensor::{Float, Tape, Tensor};

pub const IMPORTANCE_MAGIC: &[u8; 8] = b"LORAGRAD";
pub const IMPORTANCE_VERSION: u32 = 1;

/// How per-example gradients are reduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// Mean of per-example absolute gradients.
    #[default]
    AbsMean,
    /// Absolute value of the signed mean gradient.
    SignedMean,
}

/// Post-reduction rescaling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceScale {
    #[default]
    Raw,
    /// Divide by the mean entry over the whole adapter, so importance
    /// averages 1 and penalty strengths are comparable with plain L2.
    UnitMean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceOptions {
    #[serde(default)]
    pub mode: ImportanceMode,
    #[serde(default)]
    pub scale: ImportanceScale,
    /// Worker threads; examples are split into contiguous shards.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

/// `(G_X, G_Y)` per adapter target, at adapter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImportance<T: Float = f32> {
    pub task_name: String,
    rank: usize,
    entries: FactorMap<T>,
    pub m: usize,
    pub mode: ImportanceMode,
    pub scale: ImportanceScale,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImportanceHeader {
    version: u32,
    task_name: String,
    rank: usize,
    m: usize,
    mode: ImportanceMode,
    scale: ImportanceScale,
    targets: Vec<crate::adapter::TargetEntry>,
}

/// Kahan-compensated running sums, one per factor element.
#[derive(Debug, Clone)]
struct Accumulator {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    fn add(&mut self, values: impl Iterator<Item = f64>) {
        for ((s, c), v) in self.sum.iter_mut().zip(&mut self.comp).zip(values) {
            let y = v - *c;
            let t = *s + y;
            *c = (t - *s) - y;
            *s = t;
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        self.add(other.sum.iter().zip(&other.comp).map(|(s, c)| s - c));
    }
}

impl<T: Float> GradientImportance<T> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn entries(&self) -> &FactorMap<T> {
        &self.entries
    }

    pub fn entry(&self, target: &str) -> Result<&FactorPair<T>> {
        self.entries
            .get(target)
            .ok_or_else(|| Error::lookup("importance target", target))
    }

    /// Importance from explicit tensors; entries must be finite and ≥ 0.
    pub fn from_entries(task_name: &str, rank: usize, entries: FactorMap<T>, m: usize) -> Result<Self> {
        for (name, f) in &entries {
            if f.rank() != rank || f.y.shape()[1] != rank {
                return Err(Error::config(format!("{name}: importance rank differs from {rank}")));
            }
            if f.x.data().iter().chain(f.y.data()).any(|v| !v.is_finite() || *v < T::zero()) {
                return Err(Error::Input(format!("{name}: importance must be finite and non-negative")));
            }
        }
        Ok(Self {
            task_name: task_name.to_string(),
            rank,
            entries,
            m,
            mode: ImportanceMode::AbsMean,
            scale: ImportanceScale::Raw,
        })
    }

    /// Uniform importance `G ≡ value` at `adapter`'s shapes.
    pub fn uniform(adapter: &LoRAAdapter<T>, value: f64) -> Self {
        let v = T::from_f64_lossy(value);
        Self {
            task_name: adapter.task_name.clone(),
            rank: adapter.rank(),
            entries: adapter
                .entries()
                .iter()
                .map(|(k, f)| {
                    (
                        k.clone(),
                        FactorPair {
                            x: Tensor::full(f.x.shape().to_vec(), v),
                            y: Tensor::full(f.y.shape().to_vec(), v),
                        },
                    )
                })
                .collect(),
            m: 0,
            mode: ImportanceMode::AbsMean,
            scale: ImportanceScale::Raw,
        }
    }

    /// Checks shapes agree with `adapter` target-for-target.
    pub fn check_matches(&self, adapter: &LoRAAdapter<T>) -> Result<()> {
        if self.entries.len() != adapter.entries().len() {
            return Err(Error::Compatibility(format!(
                "importance has {} targets, adapter has {}",
                self.entries.len(),
                adapter.entries().len()
            )));
        }
        for (name, f) in adapter.entries() {
            let g = self
                .entries
                .get(name)
                .ok_or_else(|| Error::Compatibility(format!("importance lacks target {name}")))?;
            if g.x.shape() != f.x.shape() || g.y.shape() != f.y.shape() {
                return Err(Error::Compatibility(format!("importance shape mismatch for {name}")));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        let (s, n) = self.entries.values().fold((0.0, 0usize), |(s, n), f| {
            (
                s + f.x.data().iter().chain(f.y.data()).map(|v| v.as_f64()).sum::<f64>(),
                n + f.numel(),
            )
        });
        s / n.max(1) as f64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (targets, payload) = encode_factors(&self.entries, self.rank, T::DTYPE);
        let header = ImportanceHeader {
            version: IMPORTANCE_VERSION,
            task_name: self.task_name.clone(),
            rank: self.rank,
            m: self.m,
            mode: self.mode,
            scale: self.scale,
            targets,
        };
        io::write_container(IMPORTANCE_MAGIC, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = io::read_container::<ImportanceHeader>(IMPORTANCE_MAGIC, bytes)?;
        let h = c.header;
        if h.version != IMPORTANCE_VERSION {
            return Err(Error::format(
                io::PREAMBLE as u64,
                format!("unsupported importance version {}", h.version),
            ));
        }
        let entries: FactorMap<T> = decode_factors(&h.targets, h.rank, c.payload, c.payload_offset)?;
        if entries
            .values()
            .any(|f| f.x.data().iter().chain(f.y.data()).any(|v| !v.is_finite() || *v < T::zero()))
        {
            return Err(Error::format(c.payload_offset, "importance entries must be finite and non-negative"));
        }
        Ok(Self {
            task_name: h.task_name,
            rank: h.rank,
            entries,
            m: h.m,
            mode: h.mode,
            scale: h.scale,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(io::sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn shard_sums<T: Float>(
    model: &Model<T>,
    adapter: &LoRAAdapter<T>,
    examples: &[EncodedPair],
    mode: ImportanceMode,
    n: usize,
) -> Result<Accumulator> {
    let mut acc = Accumulator::new(n);
    for ex in examples {
        let batch = Batch::from_pairs(&[ex]);
        let mut tape = Tape::new();
        let mut binder = Binder::new(model);
        let vars = adapter.bind_dynamic(&mut tape, &mut binder, T::one(), true);
        let loss = model.loss(&mut tape, &batch, &mut binder)?;
        tape.backward(loss)?;
        let grads = vars.iter().flat_map(|(_, x, y)| {
            let gx = tape.grad(*x).expect("trainable factor");
            let gy = tape.grad(*y).expect("trainable factor");
            gx.iter().chain(gy).map(|g| g.as_f64())
        });
        match mode {
            ImportanceMode::AbsMean => acc.add(grads.map(f64::abs)),
            ImportanceMode::SignedMean => acc.add(grads),
        }
    }
    Ok(acc)
}

/// Per-element importance of `adapter`'s factors over the first `m` examples.
///
/// Gradients are taken directly w.r.t. `X` and `Y` on the dynamic
/// (unmerged) path, one example at a time.
pub fn accumulate_importance<T: Float>(
    model: &Model<T>,
    adapter: &LoRAAdapter<T>,
    examples: &[EncodedPair],
    m: usize,
    opts: ImportanceOptions,
) -> Result<GradientImportance<T>> {
    if m == 0 {
        return Err(Error::config("importance needs M ≥ 1 examples"));
    }
    if m > examples.len() {
        return Err(Error::config(format!(
            "M = {m} exceeds the {} available examples",
            examples.len()
        )));
    }
    adapter.check_compatible(model)?;
    let n: usize = adapter.entries().values().map(FactorPair::numel).sum();
    let examples = &examples[..m];
    let workers = opts.workers.clamp(1, m);
    let acc = if workers == 1 {
        shard_sums(model, adapter, examples, opts.mode, n)?
    } else {
        let chunk = m.div_ceil(workers);
        let partials: Vec<Result<Accumulator>> = std::thread::scope(|s| {
            let handles: Vec<_> = examples
                .chunks(chunk)
                .map(|shard| s.spawn(move || shard_sums(model, adapter, shard, opts.mode, n)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("importance worker panicked"))
                .collect()
        });
        let mut total = Accumulator::new(n);
        for p in partials {
            total.merge(&p?);
        }
        total
    };
    let mut values: Vec<f64> = acc
        .sum
        .iter()
        .zip(&acc.comp)
        .map(|(s, c)| ((s - c) / m as f64).abs())
        .collect();
    if opts.scale == ImportanceScale::UnitMean {
        let mean = values.iter().sum::<f64>() / n as f64;
        if mean > 0.0 {
            values.iter_mut().for_each(|v| *v /= mean);
        }
    }
    let mut offset = 0;
    let mut take = |shape: &[usize]| -> Result<Tensor<T>> {
        let len: usize = shape.iter().product();
        let data = values[offset..offset + len].iter().map(|&v| T::from_f64_lossy(v)).collect();
        offset += len;
        Tensor::from_vec(shape.to_vec(), data)
    };
    let mut entries = FactorMap::with_capacity(adapter.entries().len());
    for (name, f) in adapter.entries() {
        let x = take(f.x.shape())?;
        let y = take(f.y.shape())?;
        entries.insert(name.clone(), FactorPair { x, y });
    }
    Ok(GradientImportance {
        task_name: adapter.task_name.clone(),
        rank: adapter.rank(),
        entries,
        m,
        mode: opts.mode,
        scale: opts.scale,
    })
}
