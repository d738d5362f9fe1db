//! Minimal real-valued neural toolkit: matrices, a recording tape with
//! reverse-mode gradients, feedforward and GRU layers, Adam and clipping.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod store;
pub mod tape;
pub mod tensor;

pub use layers::{Activation, GruCell, GruStack, Linear, Mlp};
pub use optim::{adam_update, clip_global_norm, Adam, AdamConfig};
pub use store::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
