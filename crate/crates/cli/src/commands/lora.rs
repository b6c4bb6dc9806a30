use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use loramix_core::adapter::LoRAAdapter;
use loramix_core::continual::{accumulate_importance, ImportanceOptions, RegConfig, TaskRecord};
use loramix_core::data::Split;
use loramix_core::model::TargetSelector;
use loramix_core::tensor::DType;
use loramix_core::train::{token_accuracy, train, Monitor, RunHistory, Scope, TrainConfig, TrainData};
use loramix_core::Error;
use serde::{Deserialize, Serialize};

use crate::common::{check_version, emit, encode_split, load_base, load_corpus, one, read_config, read_json, require, Versioned};
use crate::output::{FileKind, OutDir};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraTrainConfig {
    #[serde(default = "one")]
    pub version: u32,
    #[serde(default)]
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub targets: Option<TargetSelector>,
    #[serde(default)]
    pub rank: Option<usize>,
    /// Continue from an existing adapter instead of a fresh one.
    #[serde(default)]
    pub init: Option<PathBuf>,
    #[serde(default)]
    pub task_name: Option<String>,
    #[serde(default = "unit")]
    pub default_lambda: f64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    /// `scope` is always `adapter`; `reg` applies against `records`.
    #[serde(default = "adapter_train")]
    pub train: TrainConfig,
    /// Task records the drift penalty pulls towards.
    #[serde(default)]
    pub records: Vec<PathBuf>,
    /// When set, importance over the first M training examples is
    /// accumulated and a task record is written.
    #[serde(default)]
    pub importance_m: Option<usize>,
    #[serde(default)]
    pub importance: ImportanceOptions,
    /// History directory (defaults to `out`).
    #[serde(default)]
    pub history: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}

fn default_dtype() -> DType {
    DType::Binary32
}

fn adapter_train() -> TrainConfig {
    TrainConfig {
        scope: Scope::Adapter,
        lr: 1e-3,
        warmup_steps: 50,
        weight_decay: 0.0,
        ..TrainConfig::default()
    }
}

impl Default for LoraTrainConfig {
    fn default() -> Self {
        Self {
            version: 1,
            base: None,
            corpus: None,
            out: None,
            targets: None,
            rank: None,
            init: None,
            task_name: None,
            default_lambda: 1.0,
            dtype: default_dtype(),
            train: adapter_train(),
            records: Vec::new(),
            importance_m: None,
            importance: ImportanceOptions::default(),
            history: None,
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Glob selector over parameter names, e.g. `dec.*.cross.?|out.proj`.
    #[arg(long)]
    targets: Option<TargetSelector>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    init: Option<PathBuf>,
    /// Regularisation config (JSON `{mode, lambda_reg, gamma}`).
    #[arg(long)]
    reg: Option<PathBuf>,
    /// Task record directory to regularise towards (repeatable).
    #[arg(long = "record")]
    records: Vec<PathBuf>,
    #[arg(long)]
    importance_m: Option<usize>,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task_name: Option<String>,
    #[arg(long)]
    default_lambda: Option<f64>,
    /// Storage precision of the written adapter.
    #[arg(long, value_parser = parse_dtype)]
    dtype: Option<DType>,
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    crate::common::parse_enum(s, "binary16, binary32")
}

/// History goes to `dir` when one was named, else into the output directory.
fn save_history(out: &mut OutDir, dir: Option<&Path>, h: &RunHistory) -> Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            let mut buf = Vec::new();
            h.write_ndjson(&mut buf)?;
            std::fs::write(d.join("history.ndjson"), buf)?;
            Ok(())
        }
        None => out.write_history("history.ndjson", h),
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: LoraTrainConfig = read_config(args.config.as_deref())?;
    check_version(cfg.version, "lora-train")?;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if args.$field.is_some() {
                cfg.$field = args.$field;
            }
        )*};
    }
    set!(base, corpus, out, targets, rank, init, importance_m, history, task_name);
    if let Some(l) = args.default_lambda {
        cfg.default_lambda = l;
    }
    if let Some(d) = args.dtype {
        cfg.dtype = d;
    }
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(path) = &args.reg {
        let reg: Versioned<RegConfig> = read_json(path)?;
        check_version(reg.version, "reg")?;
        cfg.train.reg = reg.inner;
    }
    cfg.records.extend(args.records);
    cfg.train.scope = Scope::Adapter;

    let base = load_base(&require(&cfg.base, "base")?)?;
    let corpus_dir = require(&cfg.corpus, "corpus")?;
    let out_dir = require(&cfg.out, "out")?;
    let corpora = load_corpus(&corpus_dir)?;
    let task_name = cfg.task_name.clone().unwrap_or_else(|| corpora.name().to_string());
    let max_len = base.model.config().max_len;
    let train_set = encode_split(&corpora, Split::Train, &base.vocab, max_len);
    let valid = encode_split(&corpora, Split::Valid, &base.vocab, max_len);

    let mut init = match &cfg.init {
        Some(p) => LoRAAdapter::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let targets = require(&cfg.targets, "targets")?;
            let rank = require(&cfg.rank, "rank")?;
            LoRAAdapter::init(&base.model, &targets, rank, cfg.train.seed, &task_name)?
        }
    };
    init.task_name = task_name.clone();
    init.check_compatible(&base.model)?;
    let records = cfg
        .records
        .iter()
        .map(|d| TaskRecord::load(d).with_context(|| format!("loading task record {}", d.display())))
        .collect::<Result<Vec<_>>>()?;

    let monitors = [Monitor {
        name: &task_name,
        pairs: &valid,
    }];
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &monitors,
        vocab: Some(&base.vocab),
    };
    let mut out = OutDir::create(&out_dir, "lora-train")?;
    let outcome = match train(&base.model, Some(&init), data, &cfg.train, &records) {
        Ok(o) => o,
        Err(Error::Divergence { step, reason, history }) => {
            save_history(&mut out, cfg.history.as_deref(), &history)?;
            out.finish(&cfg)?;
            return Err(Error::Divergence { step, reason, history }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let mut adapter = outcome.adapter.expect("adapter scope returns an adapter");
    adapter.default_lambda = cfg.default_lambda;
    adapter.provenance.base_hash = Some(base.hash.clone());
    adapter.created_from = cfg.init.as_ref().map(|p| p.display().to_string());
    out.write("adapter.lora", FileKind::Adapter, &adapter.to_bytes(cfg.dtype)?)?;
    save_history(&mut out, cfg.history.as_deref(), &outcome.history)?;

    let weights = adapter.overrides(&base.model, 1.0)?;
    let acc = token_accuracy(&base.model, &valid, Some(&weights))?;
    if let Some(m) = cfg.importance_m {
        let importance = accumulate_importance(&base.model, &adapter, &train_set, m, cfg.importance)?;
        let mut record = TaskRecord::new(adapter.clone(), importance)?;
        record.metric_at_freeze = Some(acc);
        record.corpus = Some(corpus_dir.display().to_string());
        record.save(&out.path("record"))?;
        for (f, kind) in [
            ("record/adapter.lora", FileKind::Adapter),
            ("record/importance.grad", FileKind::Importance),
            ("record/manifest.json", FileKind::Json),
        ] {
            out.record(f, kind)?;
        }
    }
    let summary = serde_json::json!({
        "task": task_name,
        "rank": adapter.rank(),
        "params": adapter.param_count(),
        "steps": outcome.steps,
        "best_step": outcome.best_step,
        "valid_token_accuracy": acc,
    });
    out.write_json("summary.json", &summary)?;
    out.finish(&cfg)?;
    emit(&summary);
    Ok(())
}
