//! Training loop, optimiser and evaluation metrics.

mod bleu;
mod history;
mod metrics;
mod optim;
mod trainer;

#[cfg(test)]
mod tests;

pub use bleu::{bleu, tokenize, BleuScore};
pub use history::{EvalRecord, RunHistory};
pub use metrics::{decode_bleu, eval_loss, token_accuracy, translate_all};
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use trainer::{train, Monitor, Scope, TrainConfig, TrainData, TrainOutcome};
