//! Dense linear algebra, activations, the multinomial loss and spectral
//! bounds.
//!
//! Matrices are row-major. Batches are stored one sample per row, so a layer
//! with weight `W` (`out x in`) maps a `batch x in` activation matrix `A` to
//! codes `A · Wᵀ`.

mod activation;
mod loss;
mod matrix;
mod spectral;

pub use activation::{activate, activate_grad, activate_grad_matrix, activate_matrix, ActivationKind};
pub use loss::{
    argmax, cross_entropy_rows, log_sum_exp, multinomial_grads, multinomial_loss, one_hot_index, softmax,
    softmax_rows, CrossEntropy, ReferenceClassObjective,
};
pub use matrix::{Matrix, Vector};
pub(crate) use matrix::dot;
pub use spectral::{lambda_max, lipschitz_bound, symmetric_eigenvalues, POWER_MAX_ITERS, POWER_REL_TOL};
