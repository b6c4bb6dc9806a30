use serde::{Deserialize, Serialize};

use super::{check_version, mean, one, prepare_tasks, pretrain, PreparedTask};
use crate::adapter::LoRAAdapter;
use crate::data::{Remap, SplitSizes, SyntheticTaskSpec, TaskKind, WordRange};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, TargetSelector};
use crate::train::{token_accuracy, train, Monitor, Scope, TrainConfig, TrainData, TrainOutcome};

/// Rank sweep: pretrain a base on one task, then adapt it to a domain task
/// with LoRA at each rank (and with full fine-tuning as the ceiling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepConfig {
    #[serde(default = "one")]
    pub version: u32,
    pub base_task: SyntheticTaskSpec,
    pub domain_task: SyntheticTaskSpec,
    /// Longest encoded sequence, BOS/EOS included.
    pub max_len: usize,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub adapt: TrainConfig,
    pub finetune: TrainConfig,
    pub targets: TargetSelector,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl RankSweepConfig {
    /// Desk-scale setup: 196 content words plus 4 reserved tokens, 5k domain
    /// sentences, decoder-only adaptation.
    pub fn toy() -> Self {
        let words = 196;
        let base_task = SyntheticTaskSpec {
            name: "base".into(),
            kind: TaskKind::Cipher,
            vocab_size: words,
            min_len: 4,
            max_len: 10,
            sizes: SplitSizes {
                train: 6000,
                valid: 300,
                test: 300,
            },
            seed: 101,
            permutation_seed: Some(7),
            focus: None,
            background: None,
            style: None,
            remap: None,
        };
        // A new cipher over every word: adaptation has to re-route all of
        // the base's outputs, so capacity (rank) is the bottleneck.
        let domain_task = SyntheticTaskSpec {
            name: "domain".into(),
            sizes: SplitSizes {
                train: 4000,
                valid: 500,
                test: 500,
            },
            seed: 202,
            remap: Some(Remap {
                range: WordRange { start: 0, count: words },
                seed: 3,
            }),
            ..base_task.clone()
        };
        let common = TrainConfig {
            lr: 3e-3,
            warmup_steps: 50,
            weight_decay: 0.0,
            batch_size: 32,
            patience: 3,
            eval_every: 100,
            ..TrainConfig::default()
        };
        Self {
            version: 1,
            base_task,
            domain_task,
            max_len: 12,
            model: ModelConfig {
                layers: 2,
                heads: 4,
                d_model: 64,
                d_ff: 128,
                vocab_size: 0,
                max_len: 12,
                dropout: 0.0,
                seed: 0,
                tied_embeddings: false,
                ln_eps: 1e-5,
            },
            pretrain: TrainConfig {
                max_epochs: 8,
                ..common.clone()
            },
            adapt: TrainConfig {
                scope: Scope::Adapter,
                max_epochs: 4,
                ..common.clone()
            },
            finetune: TrainConfig {
                max_epochs: 4,
                lr: 1e-3,
                ..common
            },
            targets: TargetSelector::new("dec.*.attn.?|dec.*.cross.?|dec.*.ff.w?|out.proj").expect("static selector"),
            ranks: vec![1, 4, 16, 64],
            seeds: vec![1, 2, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.version, "rank-sweep")?;
        if self.ranks.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("rank sweep needs at least one rank and one seed"));
        }
        if self.adapt.scope != Scope::Adapter || self.finetune.scope != Scope::Full {
            return Err(Error::config("`adapt` must use adapter scope and `finetune` full scope"));
        }
        Ok(())
    }
}

/// One adaptation run. `rank` is `None` for full fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: Option<usize>,
    pub seed: u64,
    pub params: usize,
    pub val_acc: f64,
    pub val_loss: f64,
    pub steps: usize,
    pub best_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    pub params: usize,
    pub mean_val_acc: f64,
    /// `(acc - base) / (full - base)`.
    pub recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepReport {
    pub base_val_acc: f64,
    pub full_val_acc: f64,
    pub full_params: usize,
    pub rows: Vec<RankRow>,
    pub summary: Vec<RankSummary>,
}

impl RankSweepReport {
    /// Mean validation accuracy never drops as rank grows.
    pub fn is_non_decreasing(&self) -> bool {
        self.summary.windows(2).all(|w| w[1].mean_val_acc >= w[0].mean_val_acc)
    }

    pub fn recovery_at(&self, rank: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.rank == rank).map(|s| s.recovery)
    }

    /// `method,rank,seed,params,val_acc,val_loss,steps,best_step`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rank,seed,params,val_acc,val_loss,steps,best_step\n");
        for r in &self.rows {
            let (method, rank) = match r.rank {
                Some(k) => ("lora", k.to_string()),
                None => ("full", String::new()),
            };
            out.push_str(&format!(
                "{method},{rank},{},{},{:.6},{:.6},{},{}\n",
                r.seed, r.params, r.val_acc, r.val_loss, r.steps, r.best_step
            ));
        }
        out
    }
}

fn row_from(outcome: &TrainOutcome<f32>, rank: Option<usize>, seed: u64, params: usize, val_acc: f64) -> RankRow {
    let best = outcome
        .history
        .records
        .iter()
        .find(|r| r.step == outcome.best_step)
        .map_or(f64::NAN, |r| r.val_loss);
    RankRow {
        rank,
        seed,
        params,
        val_acc,
        val_loss: best,
        steps: outcome.steps,
        best_step: outcome.best_step,
    }
}

/// Adapts `base` to `domain` once per (rank, seed) and once per seed with
/// full fine-tuning; the metric is validation token accuracy. `on_row` sees
/// each row as soon as it finishes.
#[allow(clippy::too_many_arguments)]
pub fn rank_sweep(
    base: &Model<f32>,
    domain: &PreparedTask,
    targets: &TargetSelector,
    ranks: &[usize],
    seeds: &[u64],
    adapt: &TrainConfig,
    finetune: &TrainConfig,
    mut on_row: impl FnMut(&RankRow),
) -> Result<RankSweepReport> {
    let monitors = [Monitor {
        name: domain.name(),
        pairs: &domain.valid,
    }];
    let data = TrainData {
        train: &domain.train,
        valid: &domain.valid,
        monitors: &monitors,
        vocab: None,
    };
    let base_val_acc = token_accuracy(base, &domain.valid, None)?;
    let mut rows = Vec::new();
    for &rank in ranks {
        for &seed in seeds {
            let init = LoRAAdapter::init(base, targets, rank, seed, domain.name())?;
            let params = init.param_count();
            let cfg = TrainConfig { seed, ..adapt.clone() };
            let out = train(base, Some(&init), data, &cfg, &[])?;
            let adapter = out.adapter.as_ref().expect("adapter scope returns an adapter");
            let acc = token_accuracy(base, &domain.valid, Some(&adapter.overrides(base, 1.0)?))?;
            let row = row_from(&out, Some(rank), seed, params, acc);
            on_row(&row);
            rows.push(row);
        }
    }
    let full_params = base.count_params(None);
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..finetune.clone() };
        let out = train(base, None, data, &cfg, &[])?;
        let acc = token_accuracy(&out.model, &domain.valid, None)?;
        let row = row_from(&out, None, seed, full_params, acc);
        on_row(&row);
        rows.push(row);
    }
    let full_val_acc = mean(rows.iter().filter(|r| r.rank.is_none()).map(|r| r.val_acc));
    let summary = ranks
        .iter()
        .map(|&rank| {
            let of_rank: Vec<&RankRow> = rows.iter().filter(|r| r.rank == Some(rank)).collect();
            let mean_val_acc = mean(of_rank.iter().map(|r| r.val_acc));
            RankSummary {
                rank,
                params: of_rank[0].params,
                mean_val_acc,
                recovery: (mean_val_acc - base_val_acc) / (full_val_acc - base_val_acc),
            }
        })
        .collect();
    Ok(RankSweepReport {
        base_val_acc,
        full_val_acc,
        full_params,
        rows,
        summary,
    })
}

/// Full pipeline from a config: generate data, pretrain the base, sweep.
/// Returns the pretrained base alongside the report.
pub fn run_rank_sweep(cfg: &RankSweepConfig, on_row: impl FnMut(&RankRow)) -> Result<(TrainOutcome<f32>, RankSweepReport)> {
    cfg.validate()?;
    let (vocab, tasks) = prepare_tasks(&[cfg.base_task.clone(), cfg.domain_task.clone()], cfg.max_len)?;
    let base = pretrain(&cfg.model, &vocab, &tasks[0], &cfg.pretrain)?;
    let report = rank_sweep(
        &base.model,
        &tasks[1],
        &cfg.targets,
        &cfg.ranks,
        &cfg.seeds,
        &cfg.adapt,
        &cfg.finetune,
        on_row,
    )?;
    Ok((base, report))
}
