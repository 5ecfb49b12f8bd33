//! Small fully connected networks with hand-written reverse mode and Adam.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{AdamState, ScalarAdam};
pub use mlp::{snapshot, soft_update, Activation, Dense, ForwardCache, Gradients, Mlp};
