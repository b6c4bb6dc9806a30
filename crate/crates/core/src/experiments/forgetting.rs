use serde::{Deserialize, Serialize};

use super::{check_version, mean, one, prepare_tasks, pretrain, PreparedTask};
use crate::adapter::LoRAAdapter;
use crate::continual::{
    accumulate_importance, grid_search_reg, GridReport, ImportanceOptions, ImportanceScale, RegConfig,
    RegMode, TaskRecord,
};
use crate::data::{Focus, Remap, SplitSizes, SyntheticTaskSpec, TaskKind, WordRange};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, TargetSelector};
use crate::train::{token_accuracy, train, Monitor, RunHistory, Scope, TrainConfig, TrainData};

/// Sequential A→B adaptation of one adapter, with the B phase regularised
/// towards the frozen A snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingConfig {
    #[serde(default = "one")]
    pub version: u32,
    pub base_task: SyntheticTaskSpec,
    pub task_a: SyntheticTaskSpec,
    pub task_b: SyntheticTaskSpec,
    pub max_len: usize,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub adapt_a: TrainConfig,
    /// `reg` is overwritten per grid cell.
    pub adapt_b: TrainConfig,
    pub targets: TargetSelector,
    pub rank: usize,
    /// Examples used to accumulate task-A importance.
    pub importance_m: usize,
    #[serde(default)]
    pub importance: ImportanceOptions,
    pub modes: Vec<RegMode>,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl ForgettingConfig {
    /// Two tasks that each re-route a disjoint block of words of a shared
    /// cipher base; the output vocabulary is the base's.
    pub fn toy() -> Self {
        let base_task = SyntheticTaskSpec {
            name: "base".into(),
            kind: TaskKind::Cipher,
            vocab_size: 60,
            min_len: 4,
            max_len: 8,
            sizes: SplitSizes {
                train: 3000,
                valid: 200,
                test: 200,
            },
            seed: 11,
            permutation_seed: Some(5),
            focus: None,
            background: None,
            style: None,
            remap: None,
        };
        let remap_task = |name: &str, start: usize, seed: u64| SyntheticTaskSpec {
            name: name.into(),
            sizes: SplitSizes {
                train: 1500,
                valid: 200,
                test: 200,
            },
            seed,
            focus: Some(Focus {
                range: WordRange { start, count: 20 },
                weight: 0.5,
            }),
            background: Some(WordRange { start: 0, count: 20 }),
            remap: Some(Remap {
                range: WordRange { start, count: 20 },
                seed,
            }),
            ..base_task.clone()
        };
        let common = TrainConfig {
            lr: 3e-3,
            warmup_steps: 30,
            weight_decay: 0.0,
            batch_size: 32,
            patience: 3,
            eval_every: 50,
            ..TrainConfig::default()
        };
        Self {
            version: 1,
            task_a: remap_task("a", 20, 31),
            task_b: remap_task("b", 40, 32),
            base_task,
            max_len: 10,
            model: ModelConfig {
                layers: 1,
                heads: 4,
                d_model: 32,
                d_ff: 64,
                vocab_size: 0,
                max_len: 10,
                dropout: 0.0,
                seed: 0,
                tied_embeddings: false,
                ln_eps: 1e-5,
            },
            pretrain: TrainConfig {
                max_epochs: 15,
                ..common.clone()
            },
            adapt_a: TrainConfig {
                scope: Scope::Adapter,
                max_epochs: 6,
                ..common.clone()
            },
            adapt_b: TrainConfig {
                scope: Scope::Adapter,
                max_epochs: 6,
                ..common
            },
            targets: TargetSelector::new("enc.embed|dec.*.cross.?").expect("static selector"),
            rank: 16,
            importance_m: 200,
            importance: ImportanceOptions {
                scale: ImportanceScale::UnitMean,
                ..ImportanceOptions::default()
            },
            modes: vec![RegMode::None, RegMode::L2, RegMode::Gradient],
            lambdas: vec![0.1, 1.0, 10.0],
            gammas: vec![1.0, 2.0],
            seeds: vec![1, 2, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.version, "forgetting-run")?;
        if self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::config("forgetting run needs at least one seed and one mode"));
        }
        if self.adapt_a.scope != Scope::Adapter || self.adapt_b.scope != Scope::Adapter {
            return Err(Error::config("both adaptation phases must use adapter scope"));
        }
        Ok(())
    }
}

/// One B-phase run (one mode, grid cell and seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRun {
    pub mode: RegMode,
    pub cell: usize,
    pub lambda_reg: f64,
    pub gamma: f64,
    pub seed: u64,
    pub val_old: f64,
    pub val_new: f64,
    pub test_old: f64,
    pub test_new: f64,
    #[serde(skip)]
    pub history: RunHistory,
}

/// Test-set result of a mode's selected cell, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: RegMode,
    pub selected: RegConfig,
    pub val_harmonic: f64,
    pub test_old: f64,
    pub test_new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    /// Task-A test accuracy right after the A phase, per seed.
    pub a_after_a: Vec<f64>,
    pub b_before: f64,
    pub runs: Vec<ForgettingRun>,
    pub grids: Vec<GridReport>,
    pub summary: Vec<ModeSummary>,
}

impl ForgettingReport {
    pub fn mode(&self, mode: RegMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    /// `mode,cell,lambda_reg,gamma,seed,val_old,val_new,test_old,test_new`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,cell,lambda_reg,gamma,seed,val_old,val_new,test_old,test_new\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.mode, r.cell, r.lambda_reg, r.gamma, r.seed, r.val_old, r.val_new, r.test_old, r.test_new
            ));
        }
        out
    }
}

/// Runs the protocol on an existing base. For each seed an adapter is
/// trained on A and frozen (snapshot plus importance); then, for each mode,
/// every grid cell continues that adapter on B. Cells are scored by the
/// harmonic mean of seed-averaged validation accuracies on A (old) and B
/// (new); the selected cell's test accuracies are reported.
pub fn forgetting_run(
    base: &Model<f32>,
    a: &PreparedTask,
    b: &PreparedTask,
    cfg: &ForgettingConfig,
    mut on_run: impl FnMut(&ForgettingRun),
) -> Result<ForgettingReport> {
    cfg.validate()?;
    let monitors = [
        Monitor {
            name: "old",
            pairs: &a.valid,
        },
        Monitor {
            name: "new",
            pairs: &b.valid,
        },
    ];
    let data_a = TrainData {
        train: &a.train,
        valid: &a.valid,
        monitors: &monitors[..1],
        vocab: None,
    };
    let data_b = TrainData {
        train: &b.train,
        valid: &b.valid,
        monitors: &monitors,
        vocab: None,
    };

    let mut frozen = Vec::with_capacity(cfg.seeds.len());
    let mut a_after_a = Vec::new();
    for &seed in &cfg.seeds {
        let init = LoRAAdapter::init(base, &cfg.targets, cfg.rank, seed, a.name())?;
        let out = train(base, Some(&init), data_a, &TrainConfig { seed, ..cfg.adapt_a.clone() }, &[])?;
        let adapter = out.adapter.expect("adapter scope");
        let w = adapter.overrides(base, 1.0)?;
        a_after_a.push(token_accuracy(base, &a.test, Some(&w))?);
        let importance = accumulate_importance(base, &adapter, &a.train, cfg.importance_m, cfg.importance)?;
        let mut record = TaskRecord::new(adapter, importance)?;
        record.metric_at_freeze = Some(token_accuracy(base, &a.valid, Some(&w))?);
        frozen.push(record);
    }

    let mut runs = Vec::new();
    let mut grids = Vec::new();
    let mut summary = Vec::new();
    for &mode in &cfg.modes {
        let first = runs.len();
        let grid = grid_search_reg(mode, &cfg.lambdas, &cfg.gammas, |reg, cell| {
            let mut scores = Vec::new();
            for (record, &seed) in frozen.iter().zip(&cfg.seeds) {
                let tc = TrainConfig {
                    seed,
                    reg,
                    ..cfg.adapt_b.clone()
                };
                let out = train(base, Some(&record.snapshot), data_b, &tc, std::slice::from_ref(record))?;
                let w = out.adapter.as_ref().expect("adapter scope").overrides(base, 1.0)?;
                let run = ForgettingRun {
                    mode,
                    cell,
                    lambda_reg: reg.lambda_reg,
                    gamma: reg.gamma,
                    seed,
                    val_old: token_accuracy(base, &a.valid, Some(&w))?,
                    val_new: token_accuracy(base, &b.valid, Some(&w))?,
                    test_old: token_accuracy(base, &a.test, Some(&w))?,
                    test_new: token_accuracy(base, &b.test, Some(&w))?,
                    history: out.history,
                };
                on_run(&run);
                scores.push((run.val_old, run.val_new));
                runs.push(run);
            }
            Ok((mean(scores.iter().map(|s| s.0)), mean(scores.iter().map(|s| s.1))))
        })?;
        let chosen: Vec<&ForgettingRun> = runs[first..].iter().filter(|r| r.cell == grid.selected_index).collect();
        let cell = &grid.cells[grid.selected_index];
        summary.push(ModeSummary {
            mode,
            selected: grid.selected,
            val_harmonic: cell.harmonic.unwrap_or(f64::NAN),
            test_old: mean(chosen.iter().map(|r| r.test_old)),
            test_new: mean(chosen.iter().map(|r| r.test_new)),
        });
        grids.push(grid);
    }
    Ok(ForgettingReport {
        a_after_a,
        b_before: token_accuracy(base, &b.test, None)?,
        runs,
        grids,
        summary,
    })
}

/// Full pipeline from a config; returns the pretrained base alongside.
pub fn run_forgetting(
    cfg: &ForgettingConfig,
    on_run: impl FnMut(&ForgettingRun),
) -> Result<(crate::train::TrainOutcome<f32>, ForgettingReport)> {
    cfg.validate()?;
    let specs = [cfg.base_task.clone(), cfg.task_a.clone(), cfg.task_b.clone()];
    let (vocab, tasks) = prepare_tasks(&specs, cfg.max_len)?;
    let base = pretrain(&cfg.model, &vocab, &tasks[0], &cfg.pretrain)?;
    let report = forgetting_run(&base.model, &tasks[1], &tasks[2], cfg, on_run)?;
    Ok((base, report))
}
