use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

/// Collapses runs of whitespace and trims.
pub fn normalize(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sentence-aligned source/target pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    name: String,
    split: Split,
    pairs: Vec<(String, String)>,
}

impl ParallelCorpus {
    /// Normalises every line and rejects pairs that end up empty.
    pub fn new(name: impl Into<String>, split: Split, pairs: Vec<(String, String)>) -> Result<Self> {
        let pairs = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| {
                let (s, t) = (normalize(&s), normalize(&t));
                if s.is_empty() || t.is_empty() {
                    Err(Error::Input(format!("empty sentence at line {}", i + 1)))
                } else {
                    Ok((s, t))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            split,
            pairs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn take(&self, n: usize) -> Self {
        Self {
            name: self.name.clone(),
            split: self.split,
            pairs: self.pairs[..n.min(self.pairs.len())].to_vec(),
        }
    }

    /// Reads `<dir>/<split>.src` and `<dir>/<split>.tgt`.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let read = |ext: &str| -> Result<Vec<String>> {
            let path = dir.join(format!("{split}.{ext}"));
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Error::Input(format!("cannot read {}: {e}", path.display()))
            })?;
            Ok(text.lines().map(str::to_string).collect())
        };
        let (src, tgt) = (read("src")?, read("tgt")?);
        if src.len() != tgt.len() {
            return Err(Error::Input(format!(
                "{}: {} source lines vs {} target lines",
                dir.display(),
                src.len(),
                tgt.len()
            )));
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, split, src.into_iter().zip(tgt).collect())
    }

    /// Writes `<dir>/<split>.src|tgt`, UTF-8 with LF endings.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut src = String::new();
        let mut tgt = String::new();
        for (s, t) in &self.pairs {
            src.push_str(s);
            src.push('\n');
            tgt.push_str(t);
            tgt.push('\n');
        }
        std::fs::write(dir.join(format!("{}.src", self.split)), src)?;
        std::fs::write(dir.join(format!("{}.tgt", self.split)), tgt)?;
        Ok(())
    }
}

/// Train/valid/test corpora of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCorpora {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

impl TaskCorpora {
    pub fn name(&self) -> &str {
        self.train.name()
    }

    pub fn get(&self, split: Split) -> &ParallelCorpus {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: ParallelCorpus::load(dir, Split::Train)?,
            valid: ParallelCorpus::load(dir, Split::Valid)?,
            test: ParallelCorpus::load(dir, Split::Test)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for split in Split::ALL {
            self.get(split).save(dir)?;
        }
        Ok(())
    }
}
