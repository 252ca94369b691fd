//! Online alternating minimization (AM) for feedforward and recurrent
//! networks.
//!
//! Instead of propagating gradients through the whole network, every hidden
//! layer gets an explicit *code* variable (its linear pre-activation). A
//! training step encodes the minibatch, moves the codes backwards through a
//! sequence of small layer-local problems, and then solves one independent
//! weight problem per layer. Two weight solvers are provided: Adam on the
//! current minibatch (`AmVariant::AmAdam`) and block coordinate descent on
//! accumulated co-activation memory (`AmVariant::AmMem`).
//!
//! All numerical containers are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the element type to `f64`, which every tolerance in
//! the test-suite assumes.

pub mod altmin;
pub mod baselines;
pub mod datasets;
mod error;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rnn;
mod scalar;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use numerics::{ActivationKind, Matrix, Vector};

pub type DenseMatrix = numerics::Matrix<f64>;
pub type DenseVector = numerics::Vector<f64>;
pub type NetworkState = model::NetworkState<f64>;
pub type CodeBatch = model::CodeBatch<f64>;
pub type MemoryState = altmin::MemoryState<f64>;
pub type AmTrainer = altmin::AmTrainer<f64>;
pub type BaselineTrainer = baselines::BaselineTrainer<f64>;
pub type ElmanState = rnn::ElmanState<f64>;
pub type RnnCodeBatch = rnn::RnnCodeBatch<f64>;
pub type Dataset = datasets::Dataset<f64>;
