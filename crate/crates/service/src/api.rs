//! Request and response bodies.

use loramix_core::mole::MixtureComponent;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub base_hash: String,
    #[serde(default)]
    pub counters: Counters,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub translations: u64,
    pub mixture_updates: u64,
    /// Updates that were folded into a newer pending mixture.
    pub coalesced: u64,
    pub recompositions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterInfo {
    pub id: String,
    pub task_name: String,
    pub rank: usize,
    pub param_count: usize,
    pub default_lambda: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureRequest {
    pub components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    /// Components exactly as submitted.
    pub components: Vec<MixtureComponent>,
    pub mixture_hash: String,
    /// Hash of the mixture active when the response was produced. Differs
    /// from `mixture_hash` only when a newer update superseded this one.
    pub active_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_override: Option<Vec<MixtureComponent>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub translation: String,
    pub mixture_hash: String,
    pub latency_ms: f64,
}
