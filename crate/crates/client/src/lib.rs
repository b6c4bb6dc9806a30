//! Async client for the translation service.
//!
//! ```no_run
//! # async fn demo() -> Result<(), loramix_client::ClientError> {
//! use loramix_client::{Client, MixtureComponent};
//!
//! let client = Client::new("http://127.0.0.1:8080")?;
//! client.set_mixture(vec![MixtureComponent::new("formal", 0.5, 1.0)]).await?;
//! let out = client.translate("w1 w2 w3").await?;
//! println!("{} ({})", out.translation, out.mixture_hash);
//! # Ok(()) }
//! ```

use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use loramix_core::mole::MixtureComponent;
pub use loramix_service::api::{
    AdapterInfo, Counters, Health, MixtureRequest, MixtureState, TranslateRequest, TranslateResponse,
};
pub use loramix_service::Problem;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid service url: {0}")]
    Url(String),
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with an error status; `problem` is its problem
    /// document when it sent one.
    #[error("service returned {status}: {}", problem.as_ref().map_or("", |p| p.detail.as_str()))]
    Status { status: StatusCode, problem: Option<Problem> },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let mut base = Url::parse(base_url).map_err(|e| ClientError::Url(format!("{base_url}: {e}")))?;
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        Ok(Self {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn with_http(mut self, http: reqwest::Client) -> Self {
        self.http = http;
        self
    }

    async fn call<B: Serialize, R: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<R, ClientError> {
        let url = self.base.join(path).map_err(|e| ClientError::Url(e.to_string()))?;
        let mut req = self.http.request(method, url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if !status.is_success() {
            let bytes = resp.bytes().await?;
            return Err(ClientError::Status {
                status,
                problem: serde_json::from_slice(&bytes).ok(),
            });
        }
        Ok(resp.json().await?)
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.call::<(), _>(Method::GET, "health", None).await
    }

    pub async fn adapters(&self) -> Result<Vec<AdapterInfo>, ClientError> {
        self.call::<(), _>(Method::GET, "adapters", None).await
    }

    pub async fn mixture(&self) -> Result<MixtureState, ClientError> {
        self.call::<(), _>(Method::GET, "mixture", None).await
    }

    pub async fn set_mixture(&self, components: Vec<MixtureComponent>) -> Result<MixtureState, ClientError> {
        self.call(Method::PUT, "mixture", Some(&MixtureRequest { components })).await
    }

    pub async fn translate(&self, text: &str) -> Result<TranslateResponse, ClientError> {
        self.translate_with(text, None).await
    }

    /// Translates under `mixture_override` without changing the active mixture.
    pub async fn translate_with(
        &self,
        text: &str,
        mixture_override: Option<Vec<MixtureComponent>>,
    ) -> Result<TranslateResponse, ClientError> {
        let req = TranslateRequest {
            text: text.to_string(),
            mixture_override,
        };
        self.call(Method::POST, "translate", Some(&req)).await
    }
}
