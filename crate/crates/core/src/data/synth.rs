//! Deterministic synthetic translation tasks.
//!
//! Content words are `w0 … w{n-1}`. A task's target side is a fixed token
//! permutation of the source (a stand-in "language pair"); style tasks
//! additionally rewrite a subset of source words into style-specific
//! synonyms `<style>_<k>` and may append a marker token `@<style>`.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{ParallelCorpus, Split, TaskCorpora};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Cipher,
    StyleSuffix,
}

/// Contiguous block of content word ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordRange {
    pub start: usize,
    pub count: usize,
}

impl WordRange {
    pub fn contains(&self, w: usize) -> bool {
        w >= self.start && w < self.start + self.count
    }
}

/// Draws a fraction `weight` of source tokens from `range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Focus {
    #[serde(flatten)]
    pub range: WordRange,
    pub weight: f64,
}

/// Reassigns the targets of `range`'s words among themselves, so that every
/// word in the range translates differently than under the plain
/// permutation while the output vocabulary stays the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Remap {
    #[serde(flatten)]
    pub range: WordRange,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub name: String,
    /// Number of source words rewritten to style synonyms. Chosen from the
    /// focus range when one is set.
    pub substitutions: usize,
    #[serde(default)]
    pub marker: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub name: String,
    pub kind: TaskKind,
    /// Number of content words.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub sizes: SplitSizes,
    /// Seeds source sentence generation; tasks sharing it (and the length
    /// and focus settings) share byte-identical source sides.
    pub seed: u64,
    /// Token permutation for cipher/style targets; `None` is the identity.
    #[serde(default)]
    pub permutation_seed: Option<u64>,
    #[serde(default)]
    pub focus: Option<Focus>,
    /// Words that non-focus tokens are drawn from (default: all words).
    #[serde(default)]
    pub background: Option<WordRange>,
    #[serde(default)]
    pub style: Option<StyleSpec>,
    #[serde(default)]
    pub remap: Option<Remap>,
}

impl SyntheticTaskSpec {
    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("task {}: {m}", self.name)));
        if self.vocab_size < 2 {
            return err("vocab_size must be at least 2".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return err(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        for (label, r) in [
            ("focus", self.focus.map(|f| f.range)),
            ("background", self.background),
            ("remap", self.remap.map(|r| r.range)),
        ] {
            if let Some(r) = r {
                if r.count == 0 || r.start + r.count > self.vocab_size {
                    return err(format!("{label} range exceeds the {} words", self.vocab_size));
                }
            }
        }
        if let Some(f) = self.focus {
            if !(0.0..=1.0).contains(&f.weight) {
                return err("focus weight must lie in [0, 1]".into());
            }
        }
        if self.remap.is_some_and(|r| r.range.count < 2) {
            return err("a remap needs at least two words".into());
        }
        if self.kind == TaskKind::Copy && self.remap.is_some() {
            return err("copy tasks cannot remap".into());
        }
        match (self.kind, &self.style) {
            (TaskKind::StyleSuffix, None) => return err("style-suffix needs a style".into()),
            (TaskKind::Copy | TaskKind::Cipher, Some(_)) => {
                return err("only style-suffix tasks carry a style".into())
            }
            _ => {}
        }
        if let Some(style) = &self.style {
            let pool = self.focus.map_or(self.vocab_size, |f| f.range.count);
            if style.substitutions > pool {
                return err(format!(
                    "{} substitutions requested from {pool} distinct words",
                    style.substitutions
                ));
            }
            if style.name.is_empty() || style.name.contains(char::is_whitespace) {
                return err("style name must be a non-empty single token".into());
            }
        }
        Ok(())
    }

    /// Target word index for each source word.
    pub fn permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.vocab_size).collect();
        if self.kind != TaskKind::Copy {
            if let Some(seed) = self.permutation_seed {
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            }
            if let Some(r) = self.remap {
                // Rotate targets along a random cycle: a derangement of the range.
                let mut order: Vec<usize> = (r.range.start..r.range.start + r.range.count).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(r.seed));
                let old = perm.clone();
                for (i, &w) in order.iter().enumerate() {
                    perm[w] = old[order[(i + 1) % order.len()]];
                }
            }
        }
        perm
    }

    /// Source word → synonym token.
    pub fn substitutions(&self) -> HashMap<usize, String> {
        let Some(style) = &self.style else {
            return HashMap::new();
        };
        let mut pool: Vec<usize> = match self.focus {
            Some(f) => (f.range.start..f.range.start + f.range.count).collect(),
            None => (0..self.vocab_size).collect(),
        };
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(style.seed));
        pool.truncate(style.substitutions);
        pool.sort_unstable();
        pool.into_iter()
            .enumerate()
            .map(|(k, w)| (w, format!("{}_{k}", style.name)))
            .collect()
    }

    pub fn translate(&self, src: &[usize], perm: &[usize], subs: &HashMap<usize, String>) -> String {
        let mut out: Vec<String> = src
            .iter()
            .map(|w| match subs.get(w) {
                Some(s) => s.clone(),
                None => format!("w{}", perm[*w]),
            })
            .collect();
        if let Some(style) = self.style.as_ref().filter(|s| s.marker) {
            out.push(format!("@{}", style.name));
        }
        out.join(" ")
    }

    fn sample_word(&self, rng: &mut ChaCha8Rng) -> usize {
        if let Some(f) = self.focus {
            if rng.random::<f64>() < f.weight {
                return f.range.start + rng.random_range(0..f.range.count);
            }
        }
        match self.background {
            Some(r) => r.start + rng.random_range(0..r.count),
            None => rng.random_range(0..self.vocab_size),
        }
    }
}

/// Generates disjoint train/valid/test splits for `spec`.
pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<TaskCorpora> {
    spec.validate()?;
    let perm = spec.permutation();
    let subs = spec.substitutions();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.sizes.train + spec.sizes.valid + spec.sizes.test;
    let mut seen = HashSet::with_capacity(total);
    let mut sentences = Vec::with_capacity(total);
    let budget = total.saturating_mul(50).max(1000);
    let mut attempts = 0usize;
    while sentences.len() < total {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Config(format!(
                "task {}: cannot draw {total} distinct sentences from {} words",
                spec.name, spec.vocab_size
            )));
        }
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let words: Vec<usize> = (0..len).map(|_| spec.sample_word(&mut rng)).collect();
        if seen.insert(words.clone()) {
            sentences.push(words);
        }
    }
    let mut it = sentences.into_iter();
    let mut split = |split: Split, n: usize| -> Result<ParallelCorpus> {
        let pairs = it
            .by_ref()
            .take(n)
            .map(|w| {
                let src = w.iter().map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
                (src, spec.translate(&w, &perm, &subs))
            })
            .collect();
        ParallelCorpus::new(spec.name.clone(), split, pairs)
    };
    Ok(TaskCorpora {
        train: split(Split::Train, spec.sizes.train)?,
        valid: split(Split::Valid, spec.sizes.valid)?,
        test: split(Split::Test, spec.sizes.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            name: "t".into(),
            kind,
            vocab_size: 30,
            min_len: 3,
            max_len: 7,
            sizes: SplitSizes {
                train: 200,
                valid: 30,
                test: 30,
            },
            seed: 11,
            permutation_seed: None,
            focus: None,
            background: None,
            style: None,
            remap: None,
        }
    }

    fn style(name: &str, seed: u64) -> SyntheticTaskSpec {
        let mut s = spec(TaskKind::StyleSuffix);
        s.name = name.into();
        s.style = Some(StyleSpec {
            name: name.into(),
            substitutions: 5,
            marker: true,
            seed,
        });
        s
    }

    #[test]
    fn copy_targets_equal_sources() {
        let c = gen_synthetic(&spec(TaskKind::Copy)).unwrap();
        assert!(c.train.pairs().iter().all(|(s, t)| s == t));
    }

    #[test]
    fn identity_cipher_equals_copy() {
        let copy = gen_synthetic(&spec(TaskKind::Copy)).unwrap();
        let cipher = gen_synthetic(&spec(TaskKind::Cipher)).unwrap();
        assert_eq!(copy.train.pairs(), cipher.train.pairs());
        let mut permuted = spec(TaskKind::Cipher);
        permuted.permutation_seed = Some(3);
        let p = gen_synthetic(&permuted).unwrap();
        assert_ne!(p.train.pairs(), copy.train.pairs());
    }

    #[test]
    fn style_tasks_share_sources() {
        let a = gen_synthetic(&style("formal", 1)).unwrap();
        let b = gen_synthetic(&style("casual", 2)).unwrap();
        let src = |c: &ParallelCorpus| c.pairs().iter().map(|p| p.0.clone()).collect::<Vec<_>>();
        assert_eq!(src(&a.train), src(&b.train));
        assert_ne!(a.train.pairs(), b.train.pairs());
        assert!(a.train.pairs().iter().all(|(_, t)| t.ends_with("@formal")));
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let s = style("formal", 1);
        let a = gen_synthetic(&s).unwrap();
        assert_eq!(a, gen_synthetic(&s).unwrap());
        let mut seen = HashSet::new();
        for split in Split::ALL {
            for (src, _) in a.get(split).pairs() {
                assert!(seen.insert(src.clone()));
            }
        }
    }

    #[test]
    fn focus_words_dominate() {
        let mut s = spec(TaskKind::Copy);
        s.focus = Some(Focus {
            range: WordRange { start: 0, count: 5 },
            weight: 0.9,
        });
        let c = gen_synthetic(&s).unwrap();
        let (mut hit, mut all) = (0, 0);
        for (src, _) in c.train.pairs() {
            for w in src.split_whitespace() {
                all += 1;
                let id: usize = w[1..].parse().unwrap();
                hit += (id < 5) as usize;
            }
        }
        assert!(hit as f64 / all as f64 > 0.8);
    }

    #[test]
    fn remap_changes_every_word_in_range_only() {
        let mut plain = spec(TaskKind::Cipher);
        plain.permutation_seed = Some(4);
        let mut remapped = plain.clone();
        remapped.remap = Some(Remap {
            range: WordRange { start: 10, count: 8 },
            seed: 9,
        });
        let (p, q) = (plain.permutation(), remapped.permutation());
        for w in 0..30 {
            assert_eq!(p[w] == q[w], !(10..18).contains(&w), "word {w}");
        }
        let mut a: Vec<usize> = p[10..18].to_vec();
        let mut b: Vec<usize> = q[10..18].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "targets are reassigned within the range");
    }

    #[test]
    fn too_small_vocab_rejected() {
        let mut s = spec(TaskKind::Copy);
        s.vocab_size = 2;
        s.min_len = 1;
        s.max_len = 1;
        assert!(matches!(gen_synthetic(&s), Err(Error::Config(_))));
        let mut st = style("x", 1);
        st.style.as_mut().unwrap().substitutions = 31;
        assert!(matches!(gen_synthetic(&st), Err(Error::Config(_))));
    }
}
