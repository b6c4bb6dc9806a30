use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use super::corpus::ParallelCorpus;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word-level vocabulary; ids 0..4 are reserved for pad/bos/eos/unk.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Token coverage of the corpora a vocabulary was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageReport {
    pub total_tokens: usize,
    pub oov_tokens: usize,
    pub oov_rate: f64,
}

impl Vocab {
    /// Builds from both sides of every corpus. Order is frequency descending,
    /// then lexicographic; `max_size` caps the non-reserved entries.
    pub fn build(
        corpora: &[&ParallelCorpus],
        max_size: Option<usize>,
    ) -> Result<(Self, CoverageReport)> {
        if corpora.is_empty() || corpora.iter().all(|c| c.is_empty()) {
            return Err(Error::config("cannot build a vocabulary from empty corpora"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total = 0usize;
        for c in corpora {
            for (s, t) in c.pairs() {
                for w in s.split_whitespace().chain(t.split_whitespace()) {
                    *counts.entry(w).or_default() += 1;
                    total += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = max_size.unwrap_or(ranked.len()).min(ranked.len());
        let oov: usize = ranked[keep..].iter().map(|(_, c)| c).sum();
        let vocab = Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked[..keep].iter().map(|(w, _)| w.to_string()))
                .collect(),
        )?;
        let report = CoverageReport {
            total_tokens: total,
            oov_tokens: oov,
            oov_rate: if total == 0 {
                0.0
            } else {
                oov as f64 / total as f64
            },
        };
        Ok((vocab, report))
    }

    /// Tokens in id order; the first four must be the reserved markers.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()]
                .iter()
                .zip(RESERVED)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Input(format!(
                "vocabulary must start with {RESERVED:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Input(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED[UNK as usize])
    }

    /// Unframed ids (source side).
    pub fn encode_source(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// `bos … eos` framed ids (target side).
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(text.len() / 2 + 2);
        ids.push(BOS);
        ids.extend(self.encode_source(text));
        ids.push(EOS);
        ids
    }

    /// Inverse of [`Vocab::encode`]: drops pad/bos and stops at eos.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => continue,
                _ => words.push(self.token(id)),
            }
        }
        words.join(" ")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.tokens)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_tokens(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn corpus(lines: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            "t",
            Split::Train,
            lines.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let c = corpus(&[("a b", "a")]);
        let (v, report) = Vocab::build(&[&c], Some(10)).unwrap();
        assert_eq!(&v.tokens()[4..], &["a", "b"]);
        assert_eq!(report.oov_tokens, 0);
        let c = corpus(&[("z y", "x")]);
        let (v, _) = Vocab::build(&[&c], None).unwrap();
        assert_eq!(&v.tokens()[4..], &["x", "y", "z"]);
    }

    #[test]
    fn deterministic_and_capped() {
        let c = corpus(&[("a b c d", "a b c"), ("a b", "e")]);
        let (v1, _) = Vocab::build(&[&c], Some(2)).unwrap();
        let (v2, r) = Vocab::build(&[&c], Some(2)).unwrap();
        assert_eq!(v1.to_json().unwrap(), v2.to_json().unwrap());
        assert_eq!(v1.len(), 2 + RESERVED.len());
        assert_eq!(r.oov_tokens, 4);
    }

    #[test]
    fn empty_corpora_rejected() {
        assert!(matches!(Vocab::build(&[], None), Err(Error::Config(_))));
    }

    #[test]
    fn encode_decode_round_trip_and_unk() {
        let c = corpus(&[("hello world", "hola mundo")]);
        let (v, _) = Vocab::build(&[&c], None).unwrap();
        assert_eq!(v.decode(&v.encode("hola mundo")), "hola mundo");
        assert_eq!(v.encode_source("hello nope"), vec![v.id("hello"), UNK]);
        assert_eq!(v.encode(""), vec![BOS, EOS]);
    }

    #[test]
    fn json_round_trip() {
        let c = corpus(&[("a b", "c")]);
        let (v, _) = Vocab::build(&[&c], None).unwrap();
        assert_eq!(Vocab::from_json(&v.to_json().unwrap()).unwrap(), v);
        assert!(Vocab::from_json("[\"a\"]").is_err());
    }
}
