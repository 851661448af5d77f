//! Reverse-mode automatic differentiation over a dynamic tape.

pub mod gradcheck;
mod graph;
pub mod ops;

pub use graph::{Backward, Graph, Var};
