use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use loramix_core::adapter::LoRAAdapter;
use loramix_core::data::{encode_corpus, EncodedPair, Split, TaskCorpora, Vocab};
use loramix_core::model::{checkpoint, Model};
use loramix_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A config type that has no `version` field of its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versioned<T> {
    #[serde(default = "one")]
    pub version: u32,
    #[serde(flatten)]
    pub inner: T,
}

pub fn one() -> u32 {
    1
}

pub fn check_version(version: u32, what: &str) -> Result<()> {
    if version != 1 {
        return Err(Error::Config(format!("{what}: config version {version} is not supported (expected 1)")).into());
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

/// Reads a versioned config file, or `T::default()` when no file is given.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

/// Parses a serde `snake_case`/`lowercase` enum name from a flag value.
pub fn parse_enum<T: DeserializeOwned>(s: &str, options: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value `{s}` ({options})"))
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

/// Required setting that may come from a flag or from the config file.
pub fn require<T: Clone>(value: &Option<T>, name: &str) -> Result<T> {
    value.clone().ok_or_else(|| usage(format!("missing `{name}` (flag or config field)")))
}

/// Checkpoint with its embedded vocabulary and content hash.
pub struct Base {
    pub model: Model<f32>,
    pub vocab: Vocab,
    pub hash: String,
}

pub fn load_base(path: &Path) -> Result<Base> {
    let (model, vocab, _) = checkpoint::load::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    let vocab = vocab.ok_or_else(|| Error::Input(format!("{} has no embedded vocabulary", path.display())))?;
    let hash = checkpoint::model_hash(&model);
    Ok(Base { model, vocab, hash })
}

pub fn load_corpus(dir: &Path) -> Result<TaskCorpora> {
    TaskCorpora::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

pub fn encode_split(corpora: &TaskCorpora, split: Split, vocab: &Vocab, max_len: usize) -> Vec<EncodedPair> {
    encode_corpus(corpora.get(split), vocab, max_len)
}

/// Adapter files (`.lora`) and directories of them; ids are file stems.
pub fn adapter_files(paths: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "lora"))
                .collect();
            found.sort();
            out.extend(found.into_iter().map(|f| (stem(&f), f)));
        } else {
            out.push((stem(p), p.clone()));
        }
    }
    Ok(out)
}

pub fn load_adapters(paths: &[PathBuf]) -> Result<BTreeMap<String, LoRAAdapter<f32>>> {
    let mut map = BTreeMap::new();
    for (id, path) in adapter_files(paths)? {
        let a = LoRAAdapter::load(&path).with_context(|| format!("loading {}", path.display()))?;
        if map.insert(id.clone(), a).is_some() {
            return Err(Error::Input(format!("two adapters share the id `{id}`")).into());
        }
    }
    Ok(map)
}

pub fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// One JSON line on stdout per finished unit of work.
pub fn emit(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("plain data"));
}
