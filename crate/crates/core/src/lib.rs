pub mod adapter;
pub mod continual;
pub mod data;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod mole;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
