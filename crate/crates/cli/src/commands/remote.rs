use std::path::PathBuf;

use anyhow::Result;
use clap::Subcommand;
use loramix_client::{Client, MixtureComponent};

use crate::common::{emit, read_json};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    url: String,
    #[command(subcommand)]
    call: Call,
}

#[derive(Subcommand)]
enum Call {
    Health,
    /// List the loaded adapters.
    Adapters,
    /// Show the active mixture.
    Mixture,
    /// Replace the active mixture with a descriptor file.
    SetMixture { file: PathBuf },
    Translate {
        text: String,
        /// Mixture descriptor used for this request only.
        #[arg(long = "override")]
        mixture_override: Option<PathBuf>,
    },
}

pub fn run(args: Args) -> Result<()> {
    let client = Client::new(&args.url)?;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        match args.call {
            Call::Health => emit(&client.health().await?),
            Call::Adapters => emit(&client.adapters().await?),
            Call::Mixture => emit(&client.mixture().await?),
            Call::SetMixture { file } => {
                let components: Vec<MixtureComponent> = read_json(&file)?;
                emit(&client.set_mixture(components).await?);
            }
            Call::Translate { text, mixture_override } => {
                let over = mixture_override
                    .map(|p| read_json::<Vec<MixtureComponent>>(&p))
                    .transpose()?;
                emit(&client.translate_with(&text, over).await?);
            }
        }
        Ok(())
    })
}
