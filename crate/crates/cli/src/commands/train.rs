use std::path::PathBuf;

use anyhow::Result;
use loramix_core::data::{Split, Vocab};
use loramix_core::model::{checkpoint, Model, ModelConfig};
use loramix_core::train::{token_accuracy, train, Monitor, Scope, TrainConfig, TrainData};
use loramix_core::Error;
use serde::{Deserialize, Serialize};

use crate::common::{check_version, emit, encode_split, load_corpus, one, read_config, require, usage};
use crate::output::{FileKind, OutDir};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    #[serde(default = "one")]
    pub version: u32,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Keep only the most frequent words (others become `<unk>`).
    #[serde(default)]
    pub vocab_max: Option<usize>,
    /// `vocab_size` is filled in from the corpus.
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_model() -> ModelConfig {
    ModelConfig::toy(0)
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            version: 1,
            corpus: None,
            out: None,
            vocab_max: None,
            model: default_model(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory with train/valid/test `.src`/`.tgt` files.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: TrainRunConfig = read_config(args.config.as_deref())?;
    check_version(cfg.version, "train")?;
    if args.corpus.is_some() {
        cfg.corpus = args.corpus;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(s) = args.max_steps {
        cfg.train.max_steps = s;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if cfg.train.scope != Scope::Full {
        return Err(usage("`train` pretrains the full model; use `lora-train` for adapters"));
    }
    let corpus_dir = require(&cfg.corpus, "corpus")?;
    let out_dir = require(&cfg.out, "out")?;

    let corpora = load_corpus(&corpus_dir)?;
    let (vocab, coverage) = Vocab::build(&[&corpora.train], cfg.vocab_max)?;
    cfg.model.vocab_size = vocab.len();
    let max_len = cfg.model.max_len;
    let train_set = encode_split(&corpora, Split::Train, &vocab, max_len);
    let valid = encode_split(&corpora, Split::Valid, &vocab, max_len);
    let test = encode_split(&corpora, Split::Test, &vocab, max_len);

    let model = Model::<f32>::new(cfg.model.clone())?;
    let monitors = [Monitor {
        name: corpora.name(),
        pairs: &valid,
    }];
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &monitors,
        vocab: Some(&vocab),
    };
    let mut out = OutDir::create(&out_dir, "train")?;
    let outcome = match train(&model, None, data, &cfg.train, &[]) {
        Ok(o) => o,
        Err(Error::Divergence { step, reason, history }) => {
            out.write_history("history.ndjson", &history)?;
            out.finish(&cfg)?;
            return Err(Error::Divergence { step, reason, history }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let bytes = checkpoint::to_bytes(&outcome.model, Some(&vocab))?;
    out.write("base.ckpt", FileKind::Checkpoint, &bytes)?;
    out.write_history("history.ndjson", &outcome.history)?;
    let summary = serde_json::json!({
        "vocab_size": vocab.len(),
        "train_oov_rate": coverage.oov_rate,
        "params": outcome.model.count_params(None),
        "steps": outcome.steps,
        "best_step": outcome.best_step,
        "valid_token_accuracy": token_accuracy(&outcome.model, &valid, None)?,
        "test_token_accuracy": token_accuracy(&outcome.model, &test, None)?,
        "base_hash": checkpoint::model_hash(&outcome.model),
    });
    out.write_json("summary.json", &summary)?;
    out.finish(&cfg)?;
    emit(&summary);
    Ok(())
}
