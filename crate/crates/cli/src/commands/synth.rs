use std::path::PathBuf;

use anyhow::Result;
use loramix_core::data::{gen_synthetic, Split, SyntheticTaskSpec};

use crate::common::{check_version, emit, read_json, Versioned};
use crate::output::{FileKind, OutDir};

#[derive(clap::Args)]
pub struct Args {
    /// Task spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec's task name.
    #[arg(long)]
    name: Option<String>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: Versioned<SyntheticTaskSpec> = read_json(&args.spec)?;
    check_version(cfg.version, "synth")?;
    if let Some(s) = args.seed {
        cfg.inner.seed = s;
    }
    if let Some(n) = args.name {
        cfg.inner.name = n;
    }
    let corpora = gen_synthetic(&cfg.inner)?;
    let mut out = OutDir::create(&args.out, "synth")?;
    corpora.save(&args.out)?;
    for split in Split::ALL {
        for ext in ["src", "tgt"] {
            out.record(&format!("{split}.{ext}"), FileKind::Text)?;
        }
    }
    out.finish(&cfg)?;
    emit(&serde_json::json!({
        "task": cfg.inner.name,
        "train": corpora.train.len(),
        "valid": corpora.valid.len(),
        "test": corpora.test.len(),
        "out": args.out,
    }));
    Ok(())
}
