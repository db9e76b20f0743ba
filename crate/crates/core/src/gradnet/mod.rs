//! Reverse-mode differentiation, neural building blocks and the Adam
//! optimizer.

pub mod check;
pub mod nn;
mod ops;
pub mod optim;
mod tape;

pub use nn::{BatchNorm, Forward, Linear, Mlp, Mode, ParamId, ParamStore};
pub use ops::ZERO_ROW_EPS;
pub use optim::Adam;
pub use tape::{Gradients, Matrix, Tape, Var};
