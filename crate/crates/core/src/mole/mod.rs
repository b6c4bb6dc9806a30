//! Gate-free mixtures of LoRA experts: `W′ = W + Σₙ αₙ·λₙ·XₙYₙᵀ`.
//!
//! Coefficients may be negative; a negative α pushes the model away from an
//! adapter's domain, which is a legitimate steering action.

mod calibrate;

#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate, sweep_alpha, sweep_alpha_vectors, AlphaPoint, CalibrationReport, CalibrationRow};

use crate::adapter::LoRAAdapter;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::model::{Model, WeightOverrides};
use crate::tensor::{Float, Tensor};

/// One `(adapter, α, λ)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    #[serde(alias = "id")]
    pub adapter: String,
    pub alpha: f64,
    pub lambda: f64,
}

impl MixtureComponent {
    pub fn new(adapter: impl Into<String>, alpha: f64, lambda: f64) -> Self {
        Self {
            adapter: adapter.into(),
            alpha,
            lambda,
        }
    }

    pub fn coef(&self) -> f64 {
        self.alpha * self.lambda
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterMixture {
    pub components: Vec<MixtureComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_hash: Option<String>,
}

impl AdapterMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Self {
        Self {
            components,
            base_hash: None,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for c in &self.components {
            if !c.alpha.is_finite() || !c.lambda.is_finite() {
                return Err(Error::Input(format!(
                    "non-finite coefficient for adapter {}: alpha={}, lambda={}",
                    c.adapter, c.alpha, c.lambda
                )));
            }
        }
        Ok(())
    }

    /// Components in canonical (adapter id, α, λ) order.
    pub fn canonical(&self) -> Vec<MixtureComponent> {
        let mut c = self.components.clone();
        c.sort_by(|a, b| {
            a.adapter
                .cmp(&b.adapter)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.lambda.total_cmp(&b.lambda))
        });
        c
    }

    /// SHA-256 over the canonical component list; invariant to ordering.
    pub fn content_hash(&self) -> String {
        let canon: Vec<(String, u64, u64)> = self
            .canonical()
            .into_iter()
            .map(|c| (c.adapter, c.alpha.to_bits(), c.lambda.to_bits()))
            .collect();
        let body = serde_json::to_vec(&(canon, &self.base_hash)).expect("plain data");
        sha256_hex(&body)
    }

    /// Reads a mixture descriptor: a JSON array of components.
    pub fn load_descriptor(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let components = serde_json::from_str(&text)?;
        Ok(Self::new(components))
    }

    pub fn save_descriptor(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.components)? + "\n")?;
        Ok(())
    }
}

/// Lookup of adapters by id.
pub trait AdapterSource<T: Float> {
    fn adapter(&self, id: &str) -> Option<&LoRAAdapter<T>>;
}

impl<T: Float> AdapterSource<T> for BTreeMap<String, LoRAAdapter<T>> {
    fn adapter(&self, id: &str) -> Option<&LoRAAdapter<T>> {
        self.get(id)
    }
}

impl<T: Float> AdapterSource<T> for BTreeMap<String, Arc<LoRAAdapter<T>>> {
    fn adapter(&self, id: &str) -> Option<&LoRAAdapter<T>> {
        self.get(id).map(Arc::as_ref)
    }
}

impl<T: Float> AdapterSource<T> for HashMap<String, LoRAAdapter<T>> {
    fn adapter(&self, id: &str) -> Option<&LoRAAdapter<T>> {
        self.get(id)
    }
}

/// Memoises `XₙYₙᵀ` per (adapter, target) so coefficient changes only cost
/// scaled additions.
#[derive(Debug, Default)]
pub struct DeltaCache<T: Float = f32> {
    deltas: HashMap<(String, String), Arc<Tensor<T>>>,
}

impl<T: Float> DeltaCache<T> {
    pub fn new() -> Self {
        Self {
            deltas: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Drops cached deltas of one adapter (e.g. after it was reloaded).
    pub fn invalidate(&mut self, adapter: &str) {
        self.deltas.retain(|(a, _), _| a != adapter);
    }

    fn delta(&mut self, id: &str, adapter: &LoRAAdapter<T>, target: &str) -> Result<Arc<Tensor<T>>> {
        let key = (id.to_string(), target.to_string());
        if let Some(d) = self.deltas.get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(adapter.delta(target)?);
        self.deltas.insert(key, d.clone());
        Ok(d)
    }

    /// Effective weights for every target touched by a component with a
    /// non-zero `α·λ`; untouched targets are absent.
    ///
    /// Components are summed in canonical order, so permuting the mixture
    /// gives bit-identical weights.
    pub fn compose(
        &mut self,
        model: &Model<T>,
        source: &impl AdapterSource<T>,
        mix: &AdapterMixture,
    ) -> Result<WeightOverrides<T>> {
        mix.check_finite()?;
        let mut resolved = Vec::with_capacity(mix.components.len());
        for c in mix.canonical() {
            let a = source
                .adapter(&c.adapter)
                .ok_or_else(|| Error::lookup("adapter", c.adapter.clone()))?;
            a.check_compatible(model)?;
            resolved.push((c, a));
        }
        let mut sums: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (c, a) in &resolved {
            let coef = c.coef();
            if coef == 0.0 {
                continue;
            }
            for target in a.targets() {
                let d = self.delta(&c.adapter, a, target)?;
                let acc = sums
                    .entry(target.to_string())
                    .or_insert_with(|| Tensor::zeros(d.shape().to_vec()));
                acc.axpy(T::from_f64_lossy(coef), &d)?;
            }
        }
        sums.into_iter()
            .map(|(name, acc)| {
                let w = model.param(&name)?.add(&acc)?;
                Ok((name, w))
            })
            .collect()
    }
}

/// Uncached [`DeltaCache::compose`].
pub fn compose<T: Float>(
    model: &Model<T>,
    source: &impl AdapterSource<T>,
    mix: &AdapterMixture,
) -> Result<WeightOverrides<T>> {
    DeltaCache::new().compose(model, source, mix)
}
