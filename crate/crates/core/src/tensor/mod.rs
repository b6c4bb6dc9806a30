//! Dense tensors and the reverse-mode tape.

mod dense;
mod float;
mod tape;

#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;

pub use dense::Tensor;
pub use float::{DType, Float};
pub use tape::{AttentionSpec, Tape, Var, ABS_POW_EPS};
