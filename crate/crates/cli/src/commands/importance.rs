use std::path::PathBuf;

use anyhow::{Context, Result};
use loramix_core::adapter::LoRAAdapter;
use loramix_core::continual::{accumulate_importance, ImportanceMode, ImportanceOptions, ImportanceScale, TaskRecord};
use loramix_core::data::Split;
use serde::Serialize;

use crate::common::{emit, parse_enum, encode_split, load_base, load_corpus};
use crate::output::{FileKind, OutDir};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    adapter: PathBuf,
    /// Corpus directory; the first M training pairs are used.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(short = 'M', long = "examples")]
    m: usize,
    #[arg(long)]
    out: PathBuf,
    /// `raw` or `unit_mean`.
    #[arg(long, default_value = "raw", value_parser = parse_scale)]
    scale: ImportanceScale,
    /// `abs_mean` or `signed_mean`.
    #[arg(long, default_value = "abs_mean", value_parser = parse_mode)]
    mode: ImportanceMode,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn parse_scale(s: &str) -> Result<ImportanceScale, String> {
    parse_enum(s, "raw, unit_mean")
}

fn parse_mode(s: &str) -> Result<ImportanceMode, String> {
    parse_enum(s, "abs_mean, signed_mean")
}

#[derive(Serialize)]
struct Effective<'a> {
    version: u32,
    base: &'a PathBuf,
    adapter: &'a PathBuf,
    corpus: &'a PathBuf,
    m: usize,
    importance: ImportanceOptions,
}

pub fn run(args: Args) -> Result<()> {
    let base = load_base(&args.base)?;
    let adapter = LoRAAdapter::<f32>::load(&args.adapter).with_context(|| format!("loading {}", args.adapter.display()))?;
    let corpora = load_corpus(&args.corpus)?;
    let pairs = encode_split(&corpora, Split::Train, &base.vocab, base.model.config().max_len);
    let opts = ImportanceOptions {
        mode: args.mode,
        scale: args.scale,
        workers: args.workers,
    };
    let importance = accumulate_importance(&base.model, &adapter, &pairs, args.m, opts)?;

    let mut out = OutDir::create(&args.out, "importance")?;
    out.write("importance.grad", FileKind::Importance, &importance.to_bytes()?)?;
    let mut record = TaskRecord::new(adapter, importance)?;
    record.corpus = Some(args.corpus.display().to_string());
    record.save(&out.path("record"))?;
    for (f, kind) in [
        ("record/adapter.lora", FileKind::Adapter),
        ("record/importance.grad", FileKind::Importance),
        ("record/manifest.json", FileKind::Json),
    ] {
        out.record(f, kind)?;
    }
    out.finish(&Effective {
        version: 1,
        base: &args.base,
        adapter: &args.adapter,
        corpus: &args.corpus,
        m: args.m,
        importance: opts,
    })?;
    emit(&serde_json::json!({
        "task": record.task_name,
        "m": args.m,
        "mean_importance": record.importance.mean(),
        "out": args.out,
    }));
    Ok(())
}
