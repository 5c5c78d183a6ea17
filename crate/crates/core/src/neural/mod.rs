//! Minimal differentiable building blocks for the trainers.
//!
//! A small tape-based reverse-mode autodiff over dense tensors, plus the
//! pieces the trainers compose on it: MLPs, the bilinear attention scorer
//! of the centralized critic, and the Adam update rule. No GPU, no
//! convolutions, no general tensor calculus — only the primitives the
//! losses need.

mod adam;
mod attention;
mod checkpoint;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState, Direction};
pub use attention::AttentionHead;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use mlp::{Activation, Mlp};
pub use tape::{finite_difference, ParamGrads, ParamId, ParamStore, Tape, Tensor, Var};
