use std::path::{Path, PathBuf};
use std::time::Duration;

use loramix_core::adapter::LoRAAdapter;
use loramix_core::model::checkpoint;
use loramix_core::mole::AdapterMixture;
use loramix_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::state::{ServiceOptions, ServiceState};

/// What `serve` loads at startup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    #[serde(default = "one")]
    pub version: u32,
    /// Base checkpoint; must embed its vocabulary.
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub adapters: Vec<AdapterSpec>,
    /// Optional mixture descriptor applied before the listener opens.
    #[serde(default)]
    pub mixture: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_deadline")]
    pub staleness_deadline_ms: u64,
    #[serde(default)]
    pub max_decode_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    /// Defaults to the file stem.
    #[serde(default)]
    pub id: Option<String>,
    pub path: PathBuf,
}

impl AdapterSpec {
    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

fn one() -> u32 {
    1
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_deadline() -> u64 {
    2000
}

impl ServeConfig {
    pub fn new(checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            version: 1,
            checkpoint: checkpoint.into(),
            adapters: Vec::new(),
            mixture: None,
            bind: default_bind(),
            staleness_deadline_ms: default_deadline(),
            max_decode_len: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!(
                "serve config version {} is not supported (expected 1)",
                self.version
            )));
        }
        Ok(())
    }

    pub fn options(&self) -> ServiceOptions {
        ServiceOptions {
            staleness_deadline: Duration::from_millis(self.staleness_deadline_ms),
            max_decode_len: self.max_decode_len.unwrap_or(usize::MAX),
        }
    }

    /// Loads the checkpoint and adapters and applies the startup mixture.
    pub fn build_state(&self) -> Result<ServiceState> {
        self.validate()?;
        let (model, vocab, _) = checkpoint::load::<f32>(&self.checkpoint)?;
        let vocab = vocab.ok_or_else(|| {
            Error::Input(format!("checkpoint {} has no embedded vocabulary", self.checkpoint.display()))
        })?;
        let adapters = self
            .adapters
            .iter()
            .map(|s| Ok((s.id(), LoRAAdapter::load(&s.path)?)))
            .collect::<Result<Vec<_>>>()?;
        let state = ServiceState::new(model, vocab, adapters, self.options())?;
        if let Some(path) = &self.mixture {
            let mix = AdapterMixture::load_descriptor(path)?;
            state
                .set_mixture(mix.components)
                .map_err(|e| Error::Input(format!("startup mixture: {}", e.detail)))?;
        }
        Ok(state)
    }
}
