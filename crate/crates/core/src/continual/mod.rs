//! Continual adaptation: gradient importance of a finished task's adapter,
//! and the importance-weighted pull back toward its snapshot.

mod grid;
mod importance;
mod penalty;
mod record;


pub use grid::{grid_search_reg, harmonic_mean, GridCell, GridReport};
pub use importance::{
    accumulate_importance, GradientImportance, ImportanceMode, ImportanceOptions, ImportanceScale, IMPORTANCE_MAGIC,
};
pub use penalty::{reg_penalty, regularized_step_loss, RegConfig, RegMode};
pub use record::{RecordManifest, TaskRecord};
