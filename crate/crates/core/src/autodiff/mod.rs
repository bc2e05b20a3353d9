//! Dense `f64` arrays with a reverse-mode gradient tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use tape::{ElementwiseOp, Tape, Var};
pub use tensor::Tensor;

