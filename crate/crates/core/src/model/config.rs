use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and initialisation of the encoder-decoder transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    /// One token matrix shared by encoder, decoder and output projection.
    #[serde(default)]
    pub tied_embeddings: bool,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// 3 layers, 8 heads, width 256, feed-forward 512.
    pub fn standard(vocab_size: usize) -> Self {
        Self {
            layers: 3,
            heads: 8,
            d_model: 256,
            d_ff: 512,
            vocab_size,
            max_len: 256,
            dropout: 0.1,
            seed: 0,
            tied_embeddings: false,
            ln_eps: default_eps(),
        }
    }

    /// Small model used by the desk-scale experiments.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            layers: 1,
            heads: 4,
            d_model: 32,
            d_ff: 64,
            vocab_size,
            max_len: 24,
            dropout: 0.0,
            seed: 0,
            tied_embeddings: false,
            ln_eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be > 0".into()));
        }
        Ok(())
    }
}
