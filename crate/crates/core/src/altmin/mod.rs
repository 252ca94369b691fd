//! Online alternating minimization.
//!
//! A minibatch step encodes the inputs, runs the backward code phase and
//! then updates each layer's weights independently:
//!
//! * `AmAdam`: Adam steps on every layer's subproblem over the current batch.
//! * `AmMem`: hidden layers minimize the surrogate built from the
//!   co-activation memory by block coordinate descent; the output layer
//!   still uses Adam.

mod codes;
mod weights;

use std::fmt;
use std::str::FromStr;

use crate::model::NetworkState;
use crate::optim::Adam;
use crate::training::{BatchMetrics, Trainer};
use crate::{Error, Matrix, Result, Scalar};

pub use codes::{
    binary_code_descent, binary_code_update, binary_objective, layer_code_gradient, layer_objective, update_codes,
    BinaryNext, BINARY_EPS,
};
pub use weights::{
    bcd_sweeps, hidden_weight_gradient, hidden_weight_objective, output_weight_gradient, surrogate_value,
    update_memory, update_output_weights, update_weights_mem, update_weights_sgd, MemoryState, DEAD_UNIT_GUARD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuEvent {
    Batch,
    Epoch,
}

/// Penalty weight schedule: `μ ← min(μ + batch_increment, mu_max)` after
/// each minibatch and `μ ← min(μ · epoch_multiplier, mu_max)` after each
/// epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuSchedule {
    pub mu0: f64,
    pub batch_increment: f64,
    pub epoch_multiplier: f64,
    pub mu_max: f64,
}

impl MuSchedule {
    pub fn constant(mu: f64) -> Self {
        Self {
            mu0: mu,
            batch_increment: 0.0,
            epoch_multiplier: 1.0,
            mu_max: mu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 >= 0.0
            && self.batch_increment >= 0.0
            && self.epoch_multiplier >= 1.0
            && self.mu_max > 0.0
            && self.mu0 <= self.mu_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid mu schedule {self:?}")))
        }
    }

    pub fn initial(&self) -> f64 {
        self.mu0.min(self.mu_max)
    }

    pub fn step(&self, mu: f64, event: MuEvent) -> f64 {
        match event {
            MuEvent::Batch => (mu + self.batch_increment).min(self.mu_max),
            MuEvent::Epoch => (mu * self.epoch_multiplier).min(self.mu_max),
        }
    }
}

impl Default for MuSchedule {
    fn default() -> Self {
        Self {
            mu0: 0.01,
            batch_increment: 0.0,
            epoch_multiplier: 1.0,
            mu_max: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmVariant {
    AmAdam,
    AmMem,
}

impl AmVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::AmAdam => "am-adam",
            Self::AmMem => "am-mem",
        }
    }
}

impl fmt::Display for AmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "am-adam" => Ok(Self::AmAdam),
            "am-mem" => Ok(Self::AmMem),
            other => Err(Error::InvalidConfig(format!("unknown AM variant '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmConfig {
    pub variant: AmVariant,
    pub weight_lr: f64,
    pub code_lr: f64,
    /// Code steps per layer and batch; 0 disables the code phase.
    pub code_iters: usize,
    /// Adam steps (or BCD sweeps for AM-mem hidden layers) per layer and
    /// batch; 0 disables the weight phase.
    pub weight_iters: usize,
    pub mu: MuSchedule,
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_lr > 0.0 && self.code_lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rates must be positive (weight {}, code {})",
                self.weight_lr, self.code_lr
            )));
        }
        self.mu.validate()
    }
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            variant: AmVariant::AmAdam,
            weight_lr: 1e-3,
            code_lr: 0.1,
            code_iters: 1,
            weight_iters: 1,
            mu: MuSchedule::default(),
        }
    }
}

/// Optimizer state that persists across minibatches.
#[derive(Clone, Debug)]
pub struct AmState<T> {
    pub adam: Vec<Adam<T>>,
    pub memory: Option<MemoryState<T>>,
}

impl<T: Scalar> AmState<T> {
    pub fn new(net: &NetworkState<T>, variant: AmVariant) -> Self {
        Self {
            adam: net.weights().iter().map(Adam::for_param).collect(),
            memory: (variant == AmVariant::AmMem).then(|| MemoryState::zeros(net)),
        }
    }
}

/// One AM step: encode, update codes, update weights (and memory). The
/// returned metrics come from the plain forward pass before any update.
pub fn train_minibatch<T: Scalar>(
    net: &mut NetworkState<T>,
    state: &mut AmState<T>,
    x: &Matrix<T>,
    y: &Matrix<T>,
    cfg: &AmConfig,
    mu: f64,
) -> Result<BatchMetrics> {
    let mu_t = T::of(mu);
    let encoded = net.encode_input(x)?;
    let ce = crate::numerics::cross_entropy_rows(&net.output_logits(&encoded)?, y)?;
    let metrics = BatchMetrics {
        loss: ce.mean_loss.as_f64(),
        accuracy: ce.correct as f64 / x.rows().max(1) as f64,
    };
    let codes = update_codes(net, &encoded, x, y, cfg, mu_t)?;
    if cfg.weight_iters > 0 {
        match cfg.variant {
            AmVariant::AmAdam => update_weights_sgd(net, &codes, x, y, cfg.weight_lr, cfg.weight_iters, mu_t, &mut state.adam)?,
            AmVariant::AmMem => {
                let mem = state
                    .memory
                    .get_or_insert_with(|| MemoryState::zeros(net));
                update_memory(mem, net, x, &codes)?;
                update_weights_mem(net, mem, cfg.weight_iters)?;
                let adam = state.adam.last_mut().expect("one state per layer");
                update_output_weights(net, &codes, y, cfg.weight_lr, cfg.weight_iters, adam)?;
            }
        }
    }
    Ok(metrics)
}

/// Stateful AM trainer for [`crate::training::fit`].
#[derive(Clone, Debug)]
pub struct AmTrainer<T> {
    pub net: NetworkState<T>,
    pub cfg: AmConfig,
    state: AmState<T>,
    mu: f64,
}

impl<T: Scalar> AmTrainer<T> {
    pub fn new(net: NetworkState<T>, cfg: AmConfig) -> Result<Self> {
        cfg.validate()?;
        let state = AmState::new(&net, cfg.variant);
        let mu = cfg.mu.initial();
        Ok(Self { net, cfg, state, mu })
    }

    pub fn memory(&self) -> Option<&MemoryState<T>> {
        self.state.memory.as_ref()
    }

    pub fn into_network(self) -> NetworkState<T> {
        self.net
    }
}

impl<T: Scalar> Trainer<T> for AmTrainer<T> {
    fn algo(&self) -> &'static str {
        self.cfg.variant.name()
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn train_batch(&mut self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        let m = train_minibatch(&mut self.net, &mut self.state, x, y, &self.cfg, self.mu)?;
        self.mu = self.cfg.mu.step(self.mu, MuEvent::Batch);
        Ok(m)
    }

    fn end_epoch(&mut self) {
        self.mu = self.cfg.mu.step(self.mu, MuEvent::Epoch);
    }

    fn evaluate(&self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        let (loss, correct) = self.net.evaluate(x, y)?;
        Ok(BatchMetrics {
            loss: loss.as_f64(),
            accuracy: correct as f64 / x.rows().max(1) as f64,
        })
    }
}
