//! Dense tensors, a reverse-mode tape, Adam and parameter persistence.

pub mod checkpoint;
mod init;
mod optim;
mod params;
mod tape;
mod tensor;

pub use init::{xavier_init, InitScheme};
pub use optim::Adam;
pub use params::{sum_grads, ParamSet};
pub use tape::{softmax_values, Axis, Tape, Var, LOG_EPS};
pub use tensor::Tensor;
