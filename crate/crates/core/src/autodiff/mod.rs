//! Dense reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records each operation of a forward pass as a node holding
//! its value and the ids of its inputs. [`Tape::backward`] sweeps the node
//! list in reverse and applies each operation's adjoint rule. Broadcasting
//! is limited to two forms: a `1 × n` row vector added to or multiplied
//! into every row (`add`, `mul`), and a `rows × 1` column scaling each row
//! (`scale_rows`).

mod matrix;
mod params;
mod tape;

pub use matrix::Matrix;
pub use params::{ParamId, ParamSet, Parameter};
pub use tape::{NodeId, Tape};

