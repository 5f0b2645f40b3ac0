//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass (define-by-run) and
//! is discarded afterwards. Values are [`Tensor`]s of rank at most 2; binary
//! elementwise ops broadcast size-1 dimensions (so a `[d]` bias broadcasts
//! over `[n, d]`, and a `[n, 1]` column over `[n, d]`).
//!
//! Subgradient conventions: `relu'(0) = 0`, `|x|'(0) = 0`, and max-style ops
//! send the gradient to the first maximal input.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{SegmentMode, Tape, Var};
#[allow(unused_imports)]
pub(crate) use tape::{matmul_into, sigmoid};
pub use tensor::Tensor;
