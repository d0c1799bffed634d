//! Dense arrays with reverse-mode gradients, Adam, gradient stabilization
//! and a finite-difference oracle.

mod adam;
mod finite_diff;
mod rng;
mod stabilize;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use finite_diff::{finite_difference, grads_close, DEFAULT_RELATIVE_STEP};
pub use rng::{seeded, Rng};
pub use stabilize::{stabilize_gradients, STABILIZE_EPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
