use std::path::PathBuf;

use anyhow::Result;
use loramix_core::continual::RegMode;
use loramix_core::data::SyntheticTaskSpec;
use loramix_core::experiments::{prepare_tasks, run_forgetting, ForgettingConfig, ForgettingRun};
use loramix_core::model::checkpoint;
use serde::{Deserialize, Serialize};

use crate::common::{check_version, emit, one, read_json, usage, Versioned};
use crate::output::{FileKind, OutDir};

/// `--grid` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default = "one")]
    pub version: u32,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
}

#[derive(clap::Args)]
pub struct Args {
    /// Experiment config (JSON); the built-in toy setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Task specs for A and B, replacing the config's.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<PathBuf>>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<RegMode>>,
    /// JSON `{lambdas: [...], gammas: [...]}`.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

pub fn history_name(run: &ForgettingRun) -> String {
    format!("histories/{}-cell{}-seed{}.ndjson", run.mode, run.cell, run.seed)
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json(p)?,
        None => ForgettingConfig::toy(),
    };
    if let Some(paths) = &args.tasks {
        let [a, b] = paths.as_slice() else {
            return Err(usage("--tasks takes exactly two spec files: A,B"));
        };
        for (slot, path) in [(&mut cfg.task_a, a), (&mut cfg.task_b, b)] {
            let spec: Versioned<SyntheticTaskSpec> = read_json(path)?;
            check_version(spec.version, "task spec")?;
            *slot = spec.inner;
        }
    }
    if let Some(m) = args.modes {
        cfg.modes = m;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(path) = &args.grid {
        let grid: GridFile = read_json(path)?;
        check_version(grid.version, "grid")?;
        cfg.lambdas = grid.lambdas;
        cfg.gammas = grid.gammas;
    }
    cfg.validate()?;

    let mut out = OutDir::create(&args.out, "forgetting-run")?;
    let mut pending = Vec::new();
    let (base, report) = run_forgetting(&cfg, |r| {
        emit(r);
        pending.push((history_name(r), r.history.clone()));
    })?;
    for (name, h) in &pending {
        out.write_history(name, h)?;
    }
    let specs = [cfg.base_task.clone(), cfg.task_a.clone(), cfg.task_b.clone()];
    let (vocab, _) = prepare_tasks(&specs, cfg.max_len)?;
    out.write("base.ckpt", FileKind::Checkpoint, &checkpoint::to_bytes(&base.model, Some(&vocab))?)?;
    out.write("runs.csv", FileKind::Csv, report.to_csv().as_bytes())?;
    let mut summary = String::from("mode,lambda_reg,gamma,val_harmonic,test_old,test_new\n");
    for s in &report.summary {
        summary.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            s.mode, s.selected.lambda_reg, s.selected.gamma, s.val_harmonic, s.test_old, s.test_new
        ));
    }
    out.write("summary.csv", FileKind::Csv, summary.as_bytes())?;
    out.write_json("report.json", &report)?;
    out.finish(&cfg)?;
    emit(&serde_json::json!({ "a_after_a": report.a_after_a, "summary": report.summary }));
    Ok(())
}
