//! Dense f64 tensors, a reverse-mode tape, and a central-difference oracle.

mod finite_diff;
pub mod kernels;
mod tape;
mod tensor;

pub use finite_diff::finite_difference_gradient;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax over the last axis.
pub fn softmax(logits: &Tensor) -> crate::Result<Tensor> {
    let c = logits.last_dim()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        kernels::softmax_in_place(row);
    }
    Ok(out)
}

/// Fused log-softmax over the last axis.
pub fn log_softmax(logits: &Tensor) -> crate::Result<Tensor> {
    let c = logits.last_dim()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let lse = kernels::log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}
