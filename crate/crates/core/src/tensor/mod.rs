//! Reverse-mode differentiation engine, optimizer, parameter averaging and
//! checkpointing.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod param;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, Value};
pub use optim::{adam_step, ema_update, ida_blend, AdamState, EmaState};
pub use param::ParamStore;
