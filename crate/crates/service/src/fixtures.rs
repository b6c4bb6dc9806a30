//! Untrained, deterministic service states for tests and smoke runs.
//!
//! The base is a randomly initialised one-layer model over words `w0…w{n-1}`
//! and every adapter has random (non-zero) factors, so each mixture changes
//! what the model emits.

use loramix_core::adapter::LoRAAdapter;
use loramix_core::data::{Vocab, RESERVED};
use loramix_core::model::{Model, ModelConfig, TargetSelector};
use loramix_core::tensor::Tensor;
use loramix_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::state::{ServiceOptions, ServiceState};

pub const WORDS: usize = 16;
pub const TARGETS: &str = "enc.*.attn.?|dec.*.cross.?|out.proj";

pub fn vocab() -> Vocab {
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain((0..WORDS).map(|i| format!("w{i}")))
        .collect();
    Vocab::from_tokens(tokens).expect("well-formed tokens")
}

pub fn base_model(seed: u64) -> Model<f32> {
    Model::new(ModelConfig {
        layers: 1,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: RESERVED.len() + WORDS,
        max_len: 12,
        dropout: 0.0,
        seed,
        tied_embeddings: false,
        ln_eps: 1e-5,
    })
    .expect("valid config")
}

/// Adapter on the [`TARGETS`] matrices with both factors drawn from `N(0, std²)`.
pub fn random_adapter(base: &Model<f32>, task: &str, rank: usize, std: f64, seed: u64) -> Result<LoRAAdapter<f32>> {
    random_adapter_on(base, &TargetSelector::new(TARGETS)?, task, rank, std, seed)
}

pub fn random_adapter_on(
    base: &Model<f32>,
    sel: &TargetSelector,
    task: &str,
    rank: usize,
    std: f64,
    seed: u64,
) -> Result<LoRAAdapter<f32>> {
    let mut a = LoRAAdapter::init(base, sel, rank, seed, task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for f in a.entries_mut().values_mut() {
        f.x = Tensor::randn(f.x.shape().to_vec(), std, &mut rng);
        f.y = Tensor::randn(f.y.shape().to_vec(), std, &mut rng);
    }
    Ok(a)
}

/// Base plus `n` random adapters with ids `a0…a{n-1}`.
pub fn random_state(n: usize, rank: usize, opts: ServiceOptions) -> Result<ServiceState> {
    let base = base_model(7);
    let adapters = (0..n)
        .map(|i| Ok((format!("a{i}"), random_adapter(&base, &format!("task{i}"), rank, 0.3, i as u64 + 1)?)))
        .collect::<Result<Vec<_>>>()?;
    ServiceState::new(base, vocab(), adapters, opts)
}
