//! Corpora, vocabulary, batching and synthetic task generation.

mod batch;
mod corpus;
mod synth;
mod vocab;

pub use batch::{batch_iter, encode_corpus, make_batches, Batch, EncodedPair};
pub use corpus::{normalize, ParallelCorpus, Split, TaskCorpora};
pub use synth::{gen_synthetic, Focus, Remap, SplitSizes, StyleSpec, SyntheticTaskSpec, TaskKind, WordRange};
pub use vocab::{CoverageReport, Vocab, BOS, EOS, PAD, RESERVED, UNK};
