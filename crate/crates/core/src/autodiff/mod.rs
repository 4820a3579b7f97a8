//! Reverse-mode automatic differentiation over real tensors.
//!
//! Complex quantities are carried as `(re, im)` pairs ([`CVar`]); every loss
//! is real, so ordinary real adjoints of the pair are exact.

mod complex;
mod gradcheck;
mod graph;
mod param;
pub mod shape;

pub use complex::CVar;
pub use gradcheck::{finite_difference_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck, Stencil};
pub use graph::{BatchStats, Gradients, Graph, QuantizerMode, Var};
pub use param::{
    read_checkpoint, write_checkpoint, ParamId, ParamStore, Parameter, Record, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
