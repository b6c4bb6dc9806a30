use std::path::PathBuf;

use anyhow::Result;
use loramix_core::data::Split;
use loramix_core::mole::calibrate;
use serde::Serialize;

use super::eval::{score, Metric};
use crate::common::{emit, encode_split, load_adapters, load_base, load_corpus, stem};
use crate::output::{FileKind, OutDir};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    base: PathBuf,
    /// Adapter files or directories of `.lora` files; ids are file stems.
    #[arg(long, num_args = 1.., required = true)]
    adapters: Vec<PathBuf>,
    /// Corpus directories, one per domain.
    #[arg(long, num_args = 1.., required = true)]
    domains: Vec<PathBuf>,
    /// Candidate λ values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Acc)]
    metric: Metric,
    #[arg(long, default_value = "valid")]
    split: Split,
}

#[derive(Serialize)]
struct Effective<'a> {
    version: u32,
    base: &'a PathBuf,
    adapters: &'a [PathBuf],
    domains: &'a [PathBuf],
    grid: &'a [f64],
    metric: Metric,
    split: Split,
}

pub fn run(args: Args) -> Result<()> {
    let base = load_base(&args.base)?;
    let adapters = load_adapters(&args.adapters)?;
    let ids: Vec<String> = adapters.keys().cloned().collect();
    let max_len = base.model.config().max_len;
    let mut names = Vec::new();
    let mut sets = Vec::new();
    for d in &args.domains {
        names.push(stem(d));
        sets.push(encode_split(&load_corpus(d)?, args.split, &base.vocab, max_len));
    }
    let report = calibrate(&base.model, &adapters, &ids, &names, &args.grid, |w, d| {
        score(&base.model, &base.vocab, &sets[d], Some(w), args.metric)
    })?;

    let mut out = OutDir::create(&args.out, "calibrate")?;
    let mixture = report.mixture();
    out.write_json("mixture.json", &mixture.components)?;
    out.write_json("calibration.json", &report)?;
    let mut csv = format!("adapter,{},{},min_score\n", ids.iter().map(|i| format!("lambda_{i}")).collect::<Vec<_>>().join(","), names.iter().map(|n| format!("score_{n}")).collect::<Vec<_>>().join(","));
    for row in &report.table {
        let lambdas: Vec<String> = row.lambdas.iter().map(|l| l.to_string()).collect();
        let scores: Vec<String> = row.scores.iter().map(|s| format!("{s:.6}")).collect();
        csv.push_str(&format!("{},{},{},{:.6}\n", row.adapter, lambdas.join(","), scores.join(","), row.min_score));
    }
    out.write("calibration.csv", FileKind::Csv, csv.as_bytes())?;
    out.finish(&Effective {
        version: 1,
        base: &args.base,
        adapters: &args.adapters,
        domains: &args.domains,
        grid: &args.grid,
        metric: args.metric,
        split: args.split,
    })?;
    emit(&serde_json::json!({
        "adapters": report.adapters,
        "chosen": report.chosen,
        "before": report.before,
        "after": report.after,
        "mixture_hash": mixture.content_hash(),
    }));
    Ok(())
}
