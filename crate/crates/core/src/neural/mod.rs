//! Dense arrays, reverse-mode gradients and Adam.

mod adam;
mod array;
mod graph;
pub mod ops;

pub use adam::{AdamConfig, AdamState};
pub use array::{Array, Real};
pub(crate) use array::{axpy, dot};
pub use graph::{Gradients, Graph, Var};
pub use ops::Mode;
