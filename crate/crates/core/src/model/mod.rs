//! Encoder-decoder transformer with named LoRA injection points.

pub mod checkpoint;
mod config;
mod selector;
mod transformer;


pub use config::ModelConfig;
pub use selector::TargetSelector;
pub use transformer::{Binder, DynamicFactor, Model, WeightOverrides};
pub(crate) use transformer::argmax;
