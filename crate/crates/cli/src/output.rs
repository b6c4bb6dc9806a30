//! Output directories: every command writes its files, the effective config
//! and a manifest of SHA-256 hashes into one explicitly named directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use loramix_core::adapter::LoRAAdapter;
use loramix_core::continual::GradientImportance;
use loramix_core::io::sha256_hex;
use loramix_core::model::checkpoint;
use loramix_core::train::RunHistory;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Checkpoint,
    Adapter,
    Importance,
    Json,
    Ndjson,
    Csv,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: FileKind,
    pub sha256: String,
}

/// Provenance of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub command: String,
    pub config: String,
    pub files: Vec<FileEntry>,
}

pub struct OutDir {
    root: PathBuf,
    command: &'static str,
    files: Vec<FileEntry>,
}

impl OutDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command,
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Records a file something else already wrote under the root.
    pub fn record(&mut self, rel: &str, kind: FileKind) -> Result<()> {
        let bytes = std::fs::read(self.path(rel)).with_context(|| format!("reading back {rel}"))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            kind,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, kind: FileKind, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(rel, kind)
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        self.write(rel, FileKind::Json, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
    }

    pub fn write_history(&mut self, rel: &str, history: &RunHistory) -> Result<()> {
        let mut buf = Vec::new();
        history.write_ndjson(&mut buf)?;
        self.write(rel, FileKind::Ndjson, &buf)
    }

    /// Writes the effective config and the manifest; call last.
    pub fn finish(mut self, config: &impl Serialize) -> Result<PathBuf> {
        self.write_json(CONFIG, config)?;
        let manifest = Manifest {
            version: 1,
            command: self.command.to_string(),
            config: CONFIG.to_string(),
            files: self.files.clone(),
        };
        std::fs::write(self.path(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(self.root)
    }
}

/// Re-hashes and format-checks every file listed in `dir`'s manifest.
pub fn verify(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(loramix_core::Error::from)?;
    for f in &manifest.files {
        let p = dir.join(&f.path);
        let bytes = std::fs::read(&p).map_err(|e| loramix_core::Error::Input(format!("{}: {e}", p.display())))?;
        let got = sha256_hex(&bytes);
        if got != f.sha256 {
            bail!(loramix_core::Error::Input(format!(
                "{}: sha256 {got} does not match the manifest ({})",
                f.path, f.sha256
            )));
        }
        match f.kind {
            FileKind::Checkpoint => {
                checkpoint::from_bytes::<f32>(&bytes)?;
            }
            FileKind::Adapter => {
                LoRAAdapter::<f32>::from_bytes(&bytes)?;
            }
            FileKind::Importance => {
                GradientImportance::<f32>::from_bytes(&bytes)?;
            }
            FileKind::Json => {
                serde_json::from_slice::<serde_json::Value>(&bytes).map_err(loramix_core::Error::from)?;
            }
            FileKind::Ndjson => {
                RunHistory::read_ndjson(bytes.as_slice())?;
            }
            FileKind::Csv | FileKind::Text => {}
        }
    }
    Ok(manifest)
}
