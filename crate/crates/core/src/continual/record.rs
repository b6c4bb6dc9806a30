use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GradientImportance;
use crate::adapter::LoRAAdapter;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::tensor::{DType, Float};

const ADAPTER_FILE: &str = "adapter.lora";
const IMPORTANCE_FILE: &str = "importance.grad";
const MANIFEST_FILE: &str = "manifest.json";

/// A completed task: frozen factors plus their importance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord<T: Float = f32> {
    pub task_name: String,
    pub snapshot: LoRAAdapter<T>,
    pub importance: GradientImportance<T>,
    pub corpus: Option<String>,
    pub metric_at_freeze: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordManifest {
    pub version: u32,
    pub task_name: String,
    pub m: usize,
    #[serde(default)]
    pub metric_at_freeze: Option<f64>,
    #[serde(default)]
    pub base_hash: Option<String>,
    #[serde(default)]
    pub corpus: Option<String>,
    pub adapter_file: String,
    pub adapter_sha256: String,
    pub importance_file: String,
    pub importance_sha256: String,
}

impl<T: Float> TaskRecord<T> {
    pub fn new(snapshot: LoRAAdapter<T>, importance: GradientImportance<T>) -> Result<Self> {
        importance.check_matches(&snapshot)?;
        Ok(Self {
            task_name: snapshot.task_name.clone(),
            snapshot,
            importance,
            corpus: None,
            metric_at_freeze: None,
        })
    }

    /// Writes the bundle directory (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let adapter_sha256 = self.snapshot.save(&dir.join(ADAPTER_FILE), DType::Binary32)?;
        let importance_sha256 = self.importance.save(&dir.join(IMPORTANCE_FILE))?;
        let manifest = RecordManifest {
            version: 1,
            task_name: self.task_name.clone(),
            m: self.importance.m,
            metric_at_freeze: self.metric_at_freeze,
            base_hash: self.snapshot.provenance.base_hash.clone(),
            corpus: self.corpus.clone(),
            adapter_file: ADAPTER_FILE.into(),
            adapter_sha256,
            importance_file: IMPORTANCE_FILE.into(),
            importance_sha256,
        };
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Loads a bundle, verifying the recorded file hashes.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: RecordManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let read_checked = |file: &str, sha: &str| -> Result<Vec<u8>> {
            let bytes = std::fs::read(dir.join(file))?;
            if sha256_hex(&bytes) != sha {
                return Err(Error::format(0, format!("{file}: hash differs from manifest")));
            }
            Ok(bytes)
        };
        let snapshot = LoRAAdapter::from_bytes(&read_checked(&manifest.adapter_file, &manifest.adapter_sha256)?)?;
        let importance =
            GradientImportance::from_bytes(&read_checked(&manifest.importance_file, &manifest.importance_sha256)?)?;
        let mut rec = Self::new(snapshot, importance)?;
        rec.task_name = manifest.task_name;
        rec.corpus = manifest.corpus;
        rec.metric_at_freeze = manifest.metric_at_freeze;
        Ok(rec)
    }
}
