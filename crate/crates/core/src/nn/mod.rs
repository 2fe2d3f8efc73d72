//! Minimal differentiable building blocks for the two translation models.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{BiLstm, Linear, Lstm};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
