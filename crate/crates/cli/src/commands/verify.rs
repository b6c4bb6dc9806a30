use std::path::PathBuf;

use anyhow::Result;

use crate::common::emit;
use crate::output::verify;

#[derive(clap::Args)]
pub struct Args {
    /// Output directory containing a `manifest.json`.
    dir: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let manifest = verify(&args.dir)?;
    emit(&serde_json::json!({
        "ok": true,
        "command": manifest.command,
        "files": manifest.files.len(),
    }));
    Ok(())
}
