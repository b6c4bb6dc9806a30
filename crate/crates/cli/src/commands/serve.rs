use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use loramix_service::{AdapterSpec, ServeConfig};

use crate::common::{adapter_files, usage};

#[derive(clap::Args)]
pub struct Args {
    /// Serve config (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base checkpoint with embedded vocabulary.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Adapter files or directories of `.lora` files; ids are file stems.
    #[arg(long, num_args = 1..)]
    adapters: Vec<PathBuf>,
    /// Mixture descriptor applied before the listener opens.
    #[arg(long)]
    mixture: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    /// How long a translation may wait on an in-flight mixture update before
    /// it is answered with 503.
    #[arg(long)]
    staleness_ms: Option<u64>,
}

fn resolve(args: Args) -> Result<ServeConfig> {
    let mut cfg = match (&args.config, &args.base) {
        (Some(p), _) => ServeConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(b)) => ServeConfig::new(b),
        (None, None) => return Err(usage("serve needs --base or --config")),
    };
    if let (Some(_), Some(b)) = (&args.config, &args.base) {
        cfg.checkpoint = b.clone();
    }
    if !args.adapters.is_empty() {
        cfg.adapters = adapter_files(&args.adapters)?
            .into_iter()
            .map(|(id, path)| AdapterSpec { id: Some(id), path })
            .collect();
    }
    if args.mixture.is_some() {
        cfg.mixture = args.mixture;
    }
    if args.host.is_some() || args.port.is_some() {
        let (host, port) = cfg.bind.rsplit_once(':').unwrap_or(("127.0.0.1", "8080"));
        let host = args.host.unwrap_or_else(|| host.to_string());
        let port = args.port.map_or_else(|| port.to_string(), |p| p.to_string());
        cfg.bind = format!("{host}:{port}");
    }
    if let Some(ms) = args.staleness_ms {
        cfg.staleness_deadline_ms = ms;
    }
    Ok(cfg)
}

pub fn run(args: Args) -> Result<()> {
    let cfg = resolve(args)?;
    let state = Arc::new(cfg.build_state()?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        // Tests and scripts read this line to find an ephemeral port.
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        loramix_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}
