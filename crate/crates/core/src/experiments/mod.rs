//! End-to-end experiment drivers built from the library pieces: task
//! preparation, base pretraining, the rank sweep and the A→B forgetting
//! protocol. The CLI and the acceptance suite both run these.

mod forgetting;
mod rank;

pub use forgetting::{forgetting_run, run_forgetting, ForgettingConfig, ForgettingReport, ForgettingRun, ModeSummary};
pub use rank::{rank_sweep, run_rank_sweep, RankRow, RankSummary, RankSweepConfig, RankSweepReport};

use crate::data::{encode_corpus, gen_synthetic, EncodedPair, SyntheticTaskSpec, TaskCorpora, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::train::{train, Monitor, TrainConfig, TrainData, TrainOutcome};

/// A generated task with its splits already encoded against the shared
/// vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub spec: SyntheticTaskSpec,
    pub corpora: TaskCorpora,
    pub train: Vec<EncodedPair>,
    pub valid: Vec<EncodedPair>,
    pub test: Vec<EncodedPair>,
}

impl PreparedTask {
    pub fn name(&self) -> &str {
        &self.spec.name
    }
}

/// Generates every task and builds one vocabulary over all of their splits,
/// so adapters for different tasks live on the same base model.
pub fn prepare_tasks(specs: &[SyntheticTaskSpec], max_len: usize) -> Result<(Vocab, Vec<PreparedTask>)> {
    let corpora = specs.iter().map(gen_synthetic).collect::<Result<Vec<_>>>()?;
    let all: Vec<_> = corpora.iter().flat_map(|c| [&c.train, &c.valid, &c.test]).collect();
    let (vocab, coverage) = Vocab::build(&all, None)?;
    debug_assert_eq!(coverage.oov_tokens, 0);
    let tasks = specs
        .iter()
        .zip(corpora)
        .map(|(spec, corpora)| PreparedTask {
            spec: spec.clone(),
            train: encode_corpus(&corpora.train, &vocab, max_len),
            valid: encode_corpus(&corpora.valid, &vocab, max_len),
            test: encode_corpus(&corpora.test, &vocab, max_len),
            corpora,
        })
        .collect();
    Ok((vocab, tasks))
}

/// Trains a fresh base model on `task`; `model.vocab_size` is taken from `vocab`.
pub fn pretrain(model: &ModelConfig, vocab: &Vocab, task: &PreparedTask, cfg: &TrainConfig) -> Result<TrainOutcome<f32>> {
    let mcfg = ModelConfig {
        vocab_size: vocab.len(),
        ..model.clone()
    };
    let fresh = Model::<f32>::new(mcfg)?;
    let monitors = [Monitor {
        name: task.name(),
        pairs: &task.valid,
    }];
    train(
        &fresh,
        None,
        TrainData {
            train: &task.train,
            valid: &task.valid,
            monitors: &monitors,
            vocab: Some(vocab),
        },
        cfg,
        &[],
    )
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn check_version(version: u32, what: &str) -> Result<()> {
    if version != 1 {
        return Err(Error::Config(format!("{what} config version {version} is not supported (expected 1)")));
    }
    Ok(())
}

fn one() -> u32 {
    1
}
