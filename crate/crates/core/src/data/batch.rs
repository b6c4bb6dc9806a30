use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::ParallelCorpus;
use super::vocab::{Vocab, EOS, PAD};

/// One encoded sentence pair; `tgt` is framed `bos … eos`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl EncodedPair {
    /// Source capped at `max_len` tokens; framed target capped at `max_len`
    /// tokens with a trailing eos kept.
    pub fn new(vocab: &Vocab, src: &str, tgt: &str, max_len: usize) -> Self {
        let mut s = vocab.encode_source(src);
        s.truncate(max_len.max(1));
        let mut t = vocab.encode(tgt);
        let cap = max_len.max(2);
        if t.len() > cap {
            t.truncate(cap);
            t[cap - 1] = EOS;
        }
        Self { src: s, tgt: t }
    }

    /// Predicted positions under teacher forcing.
    pub fn target_positions(&self) -> usize {
        self.tgt.len() - 1
    }
}

pub fn encode_corpus(corpus: &ParallelCorpus, vocab: &Vocab, max_len: usize) -> Vec<EncodedPair> {
    corpus
        .pairs()
        .iter()
        .map(|(s, t)| EncodedPair::new(vocab, s, t, max_len))
        .collect()
}

/// Padded teacher-forcing batch, row-major `[batch × len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src: Vec<u32>,
    pub tgt_in: Vec<u32>,
    pub tgt_out: Vec<u32>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair]) -> Self {
        let size = pairs.len();
        let src_len = pairs.iter().map(|p| p.src.len()).max().unwrap_or(1).max(1);
        let tgt_len = pairs.iter().map(|p| p.target_positions()).max().unwrap_or(1).max(1);
        let mut src = vec![PAD; size * src_len];
        let mut tgt_in = vec![PAD; size * tgt_len];
        let mut tgt_out = vec![PAD; size * tgt_len];
        for (b, p) in pairs.iter().enumerate() {
            src[b * src_len..][..p.src.len()].copy_from_slice(&p.src);
            let n = p.target_positions();
            tgt_in[b * tgt_len..][..n].copy_from_slice(&p.tgt[..n]);
            tgt_out[b * tgt_len..][..n].copy_from_slice(&p.tgt[1..]);
        }
        Self {
            size,
            src_len,
            tgt_len,
            src,
            tgt_in,
            tgt_out,
        }
    }

    pub fn target_tokens(&self) -> usize {
        self.tgt_out.iter().filter(|&&t| t != PAD).count()
    }

    pub fn src_row(&self, b: usize) -> &[u32] {
        &self.src[b * self.src_len..][..self.src_len]
    }
}

/// Splits encoded pairs into batches, shuffled when a seed is given.
pub fn make_batches(pairs: &[EncodedPair], batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&EncodedPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            Batch::from_pairs(&refs)
        })
        .collect()
}

pub fn batch_iter(
    corpus: &ParallelCorpus,
    vocab: &Vocab,
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Vec<Batch> {
    make_batches(&encode_corpus(corpus, vocab, max_len), batch_size, shuffle_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, BOS};

    fn setup() -> (ParallelCorpus, Vocab) {
        let pairs = (0..23)
            .map(|i| {
                let n = 1 + i % 9;
                let s: Vec<String> = (0..n).map(|k| format!("w{}", (i + k) % 7)).collect();
                let t: Vec<String> = (0..n + i % 3).map(|k| format!("w{}", (i * k) % 7)).collect();
                (s.join(" "), t.join(" "))
            })
            .collect();
        let c = ParallelCorpus::new("t", Split::Train, pairs).unwrap();
        let (v, _) = Vocab::build(&[&c], None).unwrap();
        (c, v)
    }

    #[test]
    fn large_batch_holds_everything() {
        let (c, v) = setup();
        let batches = batch_iter(&c, &v, 100, 64, Some(1));
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].size, c.len());
    }

    #[test]
    fn same_seed_same_sequence() {
        let (c, v) = setup();
        assert_eq!(batch_iter(&c, &v, 4, 8, Some(7)), batch_iter(&c, &v, 4, 8, Some(7)));
        assert_ne!(batch_iter(&c, &v, 4, 8, Some(7)), batch_iter(&c, &v, 4, 8, Some(8)));
    }

    #[test]
    fn non_pad_target_count_matches_independent_count() {
        let (c, v) = setup();
        let max_len = 6;
        let expected: usize = c
            .pairs()
            .iter()
            .map(|(_, t)| {
                let framed = t.split_whitespace().count() + 2;
                framed.min(max_len) - 1
            })
            .sum();
        let got: usize = batch_iter(&c, &v, 5, max_len, Some(3))
            .iter()
            .map(Batch::target_tokens)
            .sum();
        assert_eq!(got, expected);
    }

    #[test]
    fn truncation_keeps_eos() {
        let (_, v) = setup();
        let p = EncodedPair::new(&v, "w1 w2 w3 w4", "w1 w2 w3 w4 w5 w6", 4);
        assert_eq!(p.src.len(), 4);
        assert_eq!(p.tgt.len(), 4);
        assert_eq!(p.tgt[0], BOS);
        assert_eq!(*p.tgt.last().unwrap(), EOS);
    }
}
