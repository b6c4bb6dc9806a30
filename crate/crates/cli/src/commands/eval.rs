use std::path::PathBuf;

use anyhow::Result;
use loramix_core::data::{EncodedPair, Split, Vocab};
use loramix_core::model::{Model, WeightOverrides};
use loramix_core::mole::{compose, AdapterMixture};
use loramix_core::train::{decode_bleu, token_accuracy};
use serde::Serialize;

use crate::common::{emit, encode_split, load_adapters, load_base, load_corpus, usage};
use crate::output::OutDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Teacher-forced token accuracy, eos included.
    Acc,
    /// Corpus BLEU of greedy translations.
    Bleu,
}

pub fn score(
    model: &Model<f32>,
    vocab: &Vocab,
    pairs: &[EncodedPair],
    weights: Option<&WeightOverrides<f32>>,
    metric: Metric,
) -> loramix_core::Result<f64> {
    match metric {
        Metric::Acc => token_accuracy(model, pairs, weights),
        Metric::Bleu => Ok(decode_bleu(model, vocab, pairs, weights)?.score),
    }
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    base: PathBuf,
    /// Mixture descriptor (JSON array of `{id, alpha, lambda}`).
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Adapter files or directories the mixture refers to.
    #[arg(long, num_args = 1..)]
    adapters: Vec<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value_t = Metric::Bleu)]
    metric: Metric,
    /// Also write the scores, effective config and manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Scores {
    corpus: PathBuf,
    split: Split,
    metric: Metric,
    value: f64,
    mixture_hash: String,
}

#[derive(Serialize)]
struct Effective<'a> {
    version: u32,
    base: &'a PathBuf,
    mixture: &'a Option<PathBuf>,
    adapters: &'a [PathBuf],
    corpus: &'a PathBuf,
    split: Split,
    metric: Metric,
}

pub fn run(args: Args) -> Result<()> {
    let base = load_base(&args.base)?;
    let mixture = match &args.mixture {
        Some(p) => AdapterMixture::load_descriptor(p)?,
        None if args.adapters.is_empty() => AdapterMixture::default(),
        None => return Err(usage("--adapters given without --mixture")),
    };
    let adapters = load_adapters(&args.adapters)?;
    let weights = compose(&base.model, &adapters, &mixture)?;
    let pairs = encode_split(&load_corpus(&args.corpus)?, args.split, &base.vocab, base.model.config().max_len);
    let value = score(&base.model, &base.vocab, &pairs, Some(&weights), args.metric)?;
    let scores = Scores {
        corpus: args.corpus.clone(),
        split: args.split,
        metric: args.metric,
        value,
        mixture_hash: mixture.content_hash(),
    };
    if let Some(dir) = &args.out {
        let mut out = OutDir::create(dir, "eval")?;
        out.write_json("scores.json", &scores)?;
        out.finish(&Effective {
            version: 1,
            base: &args.base,
            mixture: &args.mixture,
            adapters: &args.adapters,
            corpus: &args.corpus,
            split: args.split,
            metric: args.metric,
        })?;
    }
    emit(&scores);
    Ok(())
}
