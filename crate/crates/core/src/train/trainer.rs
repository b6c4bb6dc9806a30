use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{decode_bleu, eval_loss, token_accuracy};
use super::optim::{clip_global_norm, global_norm, AdamW};
use super::{EvalRecord, RunHistory};
use crate::adapter::LoRAAdapter;
use crate::continual::{reg_penalty, regularized_step_loss, RegConfig, TaskRecord};
use crate::data::{make_batches, EncodedPair, Vocab};
use crate::error::{Error, Result};
use crate::model::{Binder, Model, WeightOverrides};
use crate::tensor::{Float, Tape, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Every base parameter is trained.
    #[default]
    Full,
    /// Only adapter factors are trained; the base is frozen.
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scope: Scope,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard cap on optimiser steps (0 = unlimited).
    pub max_steps: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Steps between evaluations (0 = once per epoch).
    pub eval_every: usize,
    pub reg: RegConfig,
    /// Also decode the monitor sets and report BLEU at eval points.
    pub eval_bleu: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scope: Scope::Full,
            lr: 3e-4,
            warmup_steps: 200,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 20,
            max_steps: 0,
            patience: 10,
            clip_norm: 1.0,
            seed: 0,
            eval_every: 0,
            reg: RegConfig::none(),
            eval_bleu: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be finite and non-negative"));
        }
        self.reg.validate()
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Held-out set whose accuracy is reported as `val_acc_<name>`.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub name: &'a str,
    pub pairs: &'a [EncodedPair],
}

#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [EncodedPair],
    pub valid: &'a [EncodedPair],
    pub monitors: &'a [Monitor<'a>],
    /// Needed only when `eval_bleu` is set.
    pub vocab: Option<&'a Vocab>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Float> {
    /// Base model at the best evaluation (unchanged in adapter scope).
    pub model: Model<T>,
    pub adapter: Option<LoRAAdapter<T>>,
    pub history: RunHistory,
    pub best_step: usize,
    pub steps: usize,
    /// Largest post-clipping global gradient norm seen.
    pub max_clipped_norm: f64,
}

enum Trainable<T: Float> {
    Full(Model<T>),
    Adapter(LoRAAdapter<T>),
}

impl<T: Float> Trainable<T> {
    fn slots(&self, base: &Model<T>) -> (Vec<usize>, Vec<bool>) {
        match self {
            Trainable::Full(_) => (
                base.params().values().map(|t| t.len()).collect(),
                base.params().values().map(|t| t.ndim() == 2).collect(),
            ),
            Trainable::Adapter(a) => (
                a.entries().values().flat_map(|f| [f.x.len(), f.y.len()]).collect(),
                vec![true; a.entries().len() * 2],
            ),
        }
    }

    fn buffers(&mut self) -> Vec<&mut [T]> {
        match self {
            Trainable::Full(m) => m.params_mut().map(|t| t.data_mut()).collect(),
            Trainable::Adapter(a) => a
                .entries_mut()
                .values_mut()
                .flat_map(|f| [f.x.data_mut(), f.y.data_mut()])
                .collect(),
        }
    }

    fn eval_weights(&self, base: &Model<T>) -> Result<Option<WeightOverrides<T>>> {
        match self {
            Trainable::Full(_) => Ok(None),
            Trainable::Adapter(a) => a.overrides(base, 1.0).map(Some),
        }
    }
}

fn diverged(step: usize, reason: String, mut history: RunHistory, start: Instant) -> Error {
    history.wall_time_s = start.elapsed().as_secs_f64();
    Error::Divergence {
        step,
        reason,
        history: Box::new(history),
    }
}

/// Trains the base model (full scope) or an adapter on top of a frozen base
/// (adapter scope), returning the parameters at the best validation loss.
///
/// With an active `cfg.reg` and a non-empty `history`, every step minimises
/// task loss plus the drift penalty toward past snapshots.
pub fn train<T: Float>(
    base: &Model<T>,
    adapter: Option<&LoRAAdapter<T>>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    history: &[TaskRecord<T>],
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    if cfg.eval_bleu && data.vocab.is_none() {
        return Err(Error::config("eval_bleu requires a vocabulary"));
    }
    let mut state = match (cfg.scope, adapter) {
        (Scope::Full, None) => Trainable::Full(base.clone()),
        (Scope::Full, Some(_)) => return Err(Error::Usage("full scope does not take an adapter".into())),
        (Scope::Adapter, Some(a)) => {
            a.check_compatible(base)?;
            Trainable::Adapter(a.clone())
        }
        (Scope::Adapter, None) => return Err(Error::Usage("adapter scope requires an adapter".into())),
    };
    let use_penalty = cfg.reg.is_active() && !history.is_empty();
    if use_penalty && cfg.scope != Scope::Adapter {
        return Err(Error::Usage("regularisation applies to adapter scope only".into()));
    }
    let (sizes, decay) = state.slots(base);
    let mut opt = AdamW::<T>::new(&sizes, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let dropout = base.config().dropout;
    let start = Instant::now();
    let mut run = RunHistory::default();
    let mut since_best = 0usize;
    let mut step = 0usize;
    let mut max_clipped = 0.0f64;
    let mut window = (0.0f64, 0.0f64, 0usize);

    let evaluate = |state: &Trainable<T>, step: usize, epoch: usize, window: &mut (f64, f64, usize), run: &mut RunHistory| -> Result<f64> {
        let eval_model = match state {
            Trainable::Full(m) => m,
            Trainable::Adapter(_) => base,
        };
        let w = state.eval_weights(base)?;
        let val_loss = eval_loss(eval_model, data.valid, w.as_ref())?;
        let mut metrics = BTreeMap::new();
        for mon in data.monitors {
            metrics.insert(format!("val_acc_{}", mon.name), token_accuracy(eval_model, mon.pairs, w.as_ref())?);
            if cfg.eval_bleu {
                let vocab = data.vocab.expect("checked above");
                let b = decode_bleu(eval_model, vocab, mon.pairs, w.as_ref())?;
                metrics.insert(format!("val_bleu_{}", mon.name), b.score);
            }
        }
        let n = window.2.max(1) as f64;
        run.push(EvalRecord {
            step,
            epoch,
            loss: window.0 / n,
            penalty: window.1 / n,
            val_loss,
            metrics,
        })?;
        *window = (0.0, 0.0, 0);
        Ok(val_loss)
    };

    let clone_state = |s: &Trainable<T>| match s {
        Trainable::Full(m) => Trainable::Full(m.clone()),
        Trainable::Adapter(a) => Trainable::Adapter(a.clone()),
    };

    let val0 = evaluate(&state, 0, 0, &mut window, &mut run)?;
    if !val0.is_finite() {
        return Err(diverged(0, "non-finite validation loss".into(), run, start));
    }
    let mut best: Option<(f64, usize, Trainable<T>)> = Some((val0, 0, clone_state(&state)));

    'outer: for epoch in 0..cfg.max_epochs {
        let batches = make_batches(data.train, cfg.batch_size, Some(cfg.seed.wrapping_add(epoch as u64)));
        for batch in &batches {
            let mut tape = Tape::new();
            let (loss, penalty, mut grads) = {
                let (model_ref, trainable_base) = match &state {
                    Trainable::Full(m) => (m, true),
                    Trainable::Adapter(_) => (base, false),
                };
                let mut binder = Binder::new(model_ref)
                    .trainable(trainable_base)
                    .with_dropout(dropout, cfg.seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let factors: Vec<(String, Var, Var)> = match &state {
                    Trainable::Adapter(a) => a.bind_dynamic(&mut tape, &mut binder, T::one(), true),
                    Trainable::Full(_) => Vec::new(),
                };
                if let Trainable::Full(m) = &state {
                    binder.bind_all(&mut tape)?;
                    debug_assert_eq!(binder.bound().len(), m.params().len());
                }
                let task = model_ref.loss(&mut tape, batch, &mut binder)?;
                let (total, pen) = if use_penalty {
                    let p = reg_penalty(&mut tape, &factors, history, &cfg.reg)?;
                    (regularized_step_loss(&mut tape, task, p)?, tape.value(p).item().as_f64())
                } else {
                    (task, 0.0)
                };
                let loss = tape.value(task).item().as_f64();
                if !loss.is_finite() || !pen.is_finite() {
                    return Err(diverged(step, format!("non-finite loss {loss} (penalty {pen})"), run, start));
                }
                tape.backward(total)?;
                let grads: Vec<Vec<T>> = match &state {
                    Trainable::Full(m) => m
                        .params()
                        .keys()
                        .map(|n| tape.grad(binder.bound()[n]).expect("trainable").to_vec())
                        .collect(),
                    Trainable::Adapter(_) => factors
                        .iter()
                        .flat_map(|(_, x, y)| [*x, *y])
                        .map(|v| tape.grad(v).expect("trainable").to_vec())
                        .collect(),
                };
                (loss, pen, grads)
            };
            let pre = clip_global_norm(&mut grads, cfg.clip_norm);
            if !pre.is_finite() {
                return Err(diverged(step, "non-finite gradient norm".into(), run, start));
            }
            max_clipped = max_clipped.max(global_norm(&grads));
            let lr = cfg.lr_at(step);
            opt.update(&mut state.buffers(), &grads, &decay, lr);
            step += 1;
            window.0 += loss;
            window.1 += penalty;
            window.2 += 1;

            let last_step = cfg.max_steps > 0 && step >= cfg.max_steps;
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || last_step {
                let v = evaluate(&state, step, epoch, &mut window, &mut run)?;
                if !v.is_finite() {
                    return Err(diverged(step, "non-finite validation loss".into(), run, start));
                }
                if update_best(&mut best, v, step, &state, clone_state, &mut since_best) && since_best >= cfg.patience {
                    break 'outer;
                }
            }
            if last_step {
                break 'outer;
            }
        }
        if cfg.eval_every == 0 {
            let v = evaluate(&state, step, epoch, &mut window, &mut run)?;
            if !v.is_finite() {
                return Err(diverged(step, "non-finite validation loss".into(), run, start));
            }
            if update_best(&mut best, v, step, &state, clone_state, &mut since_best) && since_best >= cfg.patience {
                break;
            }
        }
    }
    run.wall_time_s = start.elapsed().as_secs_f64();
    let (_, best_step, best_state) = best.expect("initial evaluation");
    let (model, adapter) = match best_state {
        Trainable::Full(m) => (m, None),
        Trainable::Adapter(a) => (base.clone(), Some(a)),
    };
    Ok(TrainOutcome {
        model,
        adapter,
        history: run,
        best_step,
        steps: step,
        max_clipped_norm: max_clipped,
    })
}

/// Records a new best or counts a non-improving evaluation. Returns `true`
/// when the evaluation did not improve.
fn update_best<T: Float>(
    best: &mut Option<(f64, usize, Trainable<T>)>,
    val: f64,
    step: usize,
    state: &Trainable<T>,
    clone_state: impl Fn(&Trainable<T>) -> Trainable<T>,
    since_best: &mut usize,
) -> bool {
    match best {
        Some((b, _, _)) if val >= *b => {
            *since_best += 1;
            true
        }
        _ => {
            *best = Some((val, step, clone_state(state)));
            *since_best = 0;
            false
        }
    }
}
