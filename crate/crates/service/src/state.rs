use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use loramix_core::adapter::LoRAAdapter;
use loramix_core::data::{normalize, Vocab};
use loramix_core::model::{checkpoint, Model, WeightOverrides};
use loramix_core::mole::{AdapterMixture, DeltaCache, MixtureComponent};
use loramix_core::Error;
use parking_lot::{Mutex, RwLock};

use crate::api::{AdapterInfo, Counters, MixtureState, TranslateResponse};
use crate::problem::ApiError;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// A translation arriving while a recomposition has been running for
    /// longer than this gets a 503 instead of the previous mixture.
    pub staleness_deadline: Duration,
    /// Cap on generated tokens; the model's `max_len` also applies.
    pub max_decode_len: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            staleness_deadline: Duration::from_secs(2),
            max_decode_len: usize::MAX,
        }
    }
}

/// An immutable composed state. Readers clone the `Arc` and never see a
/// half-replaced mixture.
#[derive(Debug)]
pub struct Snapshot {
    pub mixture: AdapterMixture,
    pub hash: String,
    pub generation: u64,
    weights: WeightOverrides<f32>,
}

impl Snapshot {
    pub fn weights(&self) -> &WeightOverrides<f32> {
        &self.weights
    }
}

#[derive(Default)]
struct Pending {
    generation: u64,
    mixture: Option<AdapterMixture>,
}

#[derive(Default)]
struct CounterCells {
    translations: AtomicU64,
    mixture_updates: AtomicU64,
    coalesced: AtomicU64,
    recompositions: AtomicU64,
}

pub struct ServiceState {
    base: Model<f32>,
    vocab: Vocab,
    base_hash: String,
    registry: BTreeMap<String, Arc<LoRAAdapter<f32>>>,
    opts: ServiceOptions,
    active: RwLock<Arc<Snapshot>>,
    /// Latest submitted mixture not yet composed.
    pending: Mutex<Pending>,
    /// Held by whoever is composing; guards the delta cache.
    writer: Mutex<DeltaCache<f32>>,
    /// Deltas for per-request overrides, kept apart so they never wait on
    /// the writer.
    override_cache: Mutex<DeltaCache<f32>>,
    recompose_started: Mutex<Option<Instant>>,
    counters: CounterCells,
}

impl std::fmt::Debug for ServiceState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceState")
            .field("base_hash", &self.base_hash)
            .field("adapters", &self.registry.keys().collect::<Vec<_>>())
            .field("active", &self.active().hash)
            .finish()
    }
}

impl ServiceState {
    /// Builds the state with an empty active mixture (base-model behaviour).
    /// Every adapter must fit the base; one carrying a different base hash
    /// in its provenance is rejected.
    pub fn new(
        base: Model<f32>,
        vocab: Vocab,
        adapters: impl IntoIterator<Item = (String, LoRAAdapter<f32>)>,
        opts: ServiceOptions,
    ) -> loramix_core::Result<Self> {
        if vocab.len() != base.config().vocab_size {
            return Err(Error::Compatibility(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                base.config().vocab_size
            )));
        }
        let base_hash = checkpoint::model_hash(&base);
        let mut registry = BTreeMap::new();
        let mut cache = DeltaCache::new();
        for (id, a) in adapters {
            a.check_compatible(&base)?;
            if let Some(h) = &a.provenance.base_hash {
                if *h != base_hash {
                    return Err(Error::Compatibility(format!(
                        "adapter {id} was trained on base {h}, service base is {base_hash}"
                    )));
                }
            }
            if registry.insert(id.clone(), Arc::new(a)).is_some() {
                return Err(Error::Input(format!("duplicate adapter id {id}")));
            }
        }
        // Warm the delta cache so the first slider move is as cheap as the rest.
        let all = AdapterMixture::new(registry.keys().map(|id| MixtureComponent::new(id.clone(), 1.0, 1.0)).collect());
        cache.compose(&base, &registry, &all)?;
        let empty = AdapterMixture::default();
        let snapshot = Snapshot {
            hash: empty.content_hash(),
            mixture: empty,
            generation: 0,
            weights: WeightOverrides::new(),
        };
        Ok(Self {
            base,
            vocab,
            base_hash,
            registry,
            opts,
            active: RwLock::new(Arc::new(snapshot)),
            pending: Mutex::new(Pending::default()),
            writer: Mutex::new(cache),
            override_cache: Mutex::new(DeltaCache::new()),
            recompose_started: Mutex::new(None),
            counters: CounterCells::default(),
        })
    }

    pub fn base(&self) -> &Model<f32> {
        &self.base
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn base_hash(&self) -> &str {
        &self.base_hash
    }

    pub fn active(&self) -> Arc<Snapshot> {
        self.active.read().clone()
    }

    pub fn counters(&self) -> Counters {
        let c = &self.counters;
        Counters {
            translations: c.translations.load(Ordering::Relaxed),
            mixture_updates: c.mixture_updates.load(Ordering::Relaxed),
            coalesced: c.coalesced.load(Ordering::Relaxed),
            recompositions: c.recompositions.load(Ordering::Relaxed),
        }
    }

    /// Registry listing, ordered by id.
    pub fn adapters(&self) -> Vec<AdapterInfo> {
        self.registry
            .iter()
            .map(|(id, a)| AdapterInfo {
                id: id.clone(),
                task_name: a.task_name.clone(),
                rank: a.rank(),
                param_count: a.param_count(),
                default_lambda: a.default_lambda,
            })
            .collect()
    }

    fn check_components(&self, components: &[MixtureComponent]) -> Result<AdapterMixture, ApiError> {
        let mix = AdapterMixture::new(components.to_vec());
        for c in components {
            if !self.registry.contains_key(&c.adapter) {
                return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown adapter `{}`", c.adapter)));
            }
        }
        mix.check_finite().map_err(|e| ApiError::unprocessable(e.to_string()))?;
        Ok(mix)
    }

    /// Replaces the active mixture and returns once a state at least as new
    /// as this request is live.
    ///
    /// Updates arriving while another composition runs are coalesced: the
    /// next writer composes only the newest pending mixture, and requests it
    /// overtook return with `active_hash` naming the state that replaced
    /// theirs.
    pub fn set_mixture(&self, components: Vec<MixtureComponent>) -> Result<MixtureState, ApiError> {
        let mix = self.check_components(&components)?;
        let hash = mix.content_hash();
        self.counters.mixture_updates.fetch_add(1, Ordering::Relaxed);
        let generation = {
            let mut p = self.pending.lock();
            if p.mixture.is_some() {
                self.counters.coalesced.fetch_add(1, Ordering::Relaxed);
            }
            p.generation += 1;
            p.mixture = Some(mix);
            p.generation
        };

        let mut cache = self.writer.lock();
        if self.active().generation < generation {
            // Whoever took the pending slot published it under this lock, so
            // the newest mixture is still waiting unless its composition failed.
            let (g, latest) = {
                let mut p = self.pending.lock();
                match p.mixture.take() {
                    Some(m) => (p.generation, m),
                    None => {
                        return Err(ApiError::new(
                            StatusCode::INTERNAL_SERVER_ERROR,
                            "a newer mixture update failed to compose; the active mixture is unchanged",
                        ))
                    }
                }
            };
            *self.recompose_started.lock() = Some(Instant::now());
            let composed = cache.compose(&self.base, &self.registry, &latest);
            *self.recompose_started.lock() = None;
            let weights = composed.map_err(ApiError::from)?;
            self.counters.recompositions.fetch_add(1, Ordering::Relaxed);
            let snapshot = Arc::new(Snapshot {
                hash: latest.content_hash(),
                mixture: latest,
                generation: g,
                weights,
            });
            *self.active.write() = snapshot;
        }
        drop(cache);
        Ok(MixtureState {
            components,
            mixture_hash: hash,
            active_hash: self.active().hash.clone(),
        })
    }

    pub fn mixture(&self) -> MixtureState {
        let s = self.active();
        MixtureState {
            components: s.mixture.components.clone(),
            mixture_hash: s.hash.clone(),
            active_hash: s.hash.clone(),
        }
    }

    /// Greedy translation under the active mixture, or under `mixture_override`
    /// without touching the active one.
    ///
    /// Staleness is bounded: while a recomposition is in flight the previous
    /// snapshot keeps serving, but only until the deadline passes.
    pub fn translate(
        &self,
        text: &str,
        mixture_override: Option<&[MixtureComponent]>,
    ) -> Result<TranslateResponse, ApiError> {
        let start = Instant::now();
        let text = normalize(text);
        if text.is_empty() {
            return Err(ApiError::unprocessable("text is empty after normalisation"));
        }
        if let Some(t) = *self.recompose_started.lock() {
            if t.elapsed() > self.opts.staleness_deadline {
                let mut e = ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    format!(
                        "mixture recomposition has been running for {} ms (deadline {} ms)",
                        t.elapsed().as_millis(),
                        self.opts.staleness_deadline.as_millis()
                    ),
                );
                e.retry_after_secs = Some(1);
                return Err(e);
            }
        }
        let active = self.active();
        let override_weights;
        let (weights, hash) = match mixture_override {
            None => (active.weights(), active.hash.clone()),
            Some(c) => {
                let mix = self.check_components(c)?;
                let hash = mix.content_hash();
                if hash == active.hash {
                    (active.weights(), hash)
                } else {
                    override_weights = self.override_cache.lock().compose(&self.base, &self.registry, &mix)?;
                    (&override_weights, hash)
                }
            }
        };
        let src = self.vocab.encode_source(&text);
        let max_len = self.opts.max_decode_len.min(self.base.config().max_len);
        let ids = self
            .base
            .greedy_decode(std::slice::from_ref(&src), max_len, Some(weights))?
            .pop()
            .expect("one source");
        self.counters.translations.fetch_add(1, Ordering::Relaxed);
        Ok(TranslateResponse {
            translation: self.vocab.decode(&ids),
            mixture_hash: hash,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}
