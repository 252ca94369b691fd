//! Epoch orchestration shared by every trainer, so that AM and the backprop
//! baselines see identical initialization, shuffling and metrics.

use crate::datasets::{minibatches, Dataset};
use crate::{Matrix, Result, Scalar};

/// Loss and accuracy of one minibatch, measured before its weight update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

pub trait Trainer<T: Scalar> {
    /// Name written to the `algo` column.
    fn algo(&self) -> &'static str;

    /// Current penalty weight (zero for trainers without one).
    fn mu(&self) -> f64 {
        0.0
    }

    /// One optimization step on a batch of inputs and one-hot targets.
    fn train_batch(&mut self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics>;

    /// Epoch boundary hook (μ multiplier, learning-rate decay).
    fn end_epoch(&mut self) {}

    /// Mean loss and accuracy of a plain forward pass.
    fn evaluate(&self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics>;
}

impl<T: Scalar, R: Trainer<T> + ?Sized> Trainer<T> for Box<R> {
    fn algo(&self) -> &'static str {
        (**self).algo()
    }
    fn mu(&self) -> f64 {
        (**self).mu()
    }
    fn train_batch(&mut self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        (**self).train_batch(x, y)
    }
    fn end_epoch(&mut self) {
        (**self).end_epoch()
    }
    fn evaluate(&self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        (**self).evaluate(x, y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffling seed; also written to the `seed` column.
    pub seed: u64,
    /// Evaluate the held-out split every this many minibatches (0 = only at
    /// epoch ends).
    pub eval_every: usize,
    /// Also evaluate the full training set at epoch ends.
    pub eval_train: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 200,
            seed: 0,
            eval_every: 0,
            eval_train: false,
        }
    }
}

/// One line of the metrics stream. `batch` counts minibatches from the
/// start of the run; `split` is `batch` for per-minibatch training metrics or
/// the name of an evaluated data set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub batch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub mu: f64,
    pub algo: String,
    pub seed: u64,
}

pub const METRICS_HEADER: [&str; 8] = ["epoch", "batch", "split", "loss", "accuracy", "mu", "algo", "seed"];

impl MetricsRow {
    pub fn fields(&self) -> [String; 8] {
        [
            self.epoch.to_string(),
            self.batch.to_string(),
            self.split.clone(),
            format!("{:?}", self.loss),
            format!("{:?}", self.accuracy),
            format!("{:?}", self.mu),
            self.algo.clone(),
            self.seed.to_string(),
        ]
    }
}

/// A held-out set with a display name (`val`, `test`, …).
pub struct EvalSet<'a, T> {
    pub name: &'a str,
    pub data: &'a Dataset<T>,
}

struct Prepared<'a, T> {
    name: &'a str,
    x: &'a Matrix<T>,
    y: Matrix<T>,
}

/// Runs `opts.epochs` epochs of seeded minibatch training. Emits an initial
/// evaluation of every eval set, one `batch` row per minibatch, periodic and
/// end-of-epoch evaluation rows, and (with `eval_train`) a `train` row per
/// epoch.
pub fn fit<T: Scalar, R: Trainer<T> + ?Sized>(
    trainer: &mut R,
    train: &Dataset<T>,
    evals: &[EvalSet<'_, T>],
    opts: &FitOptions,
) -> Result<Vec<MetricsRow>> {
    let evals: Vec<Prepared<'_, T>> = evals
        .iter()
        .map(|e| Prepared {
            name: e.name,
            x: &e.data.features,
            y: e.data.one_hot_targets(),
        })
        .collect();
    let train_y = opts.eval_train.then(|| train.one_hot_targets());

    let mut rows = Vec::new();
    let row = |trainer: &R, epoch: usize, batch: usize, split: &str, m: BatchMetrics| MetricsRow {
        epoch,
        batch,
        split: split.to_string(),
        loss: m.loss,
        accuracy: m.accuracy,
        mu: trainer.mu(),
        algo: trainer.algo().to_string(),
        seed: opts.seed,
    };
    for e in &evals {
        rows.push(row(trainer, 0, 0, e.name, trainer.evaluate(e.x, &e.y)?));
    }

    let mut global = 0;
    for epoch in 0..opts.epochs {
        let batches = minibatches(train, opts.batch_size, opts.seed, epoch)?;
        let n_batches = batches.len();
        for (b, batch) in batches.into_iter().enumerate() {
            let mu_used = trainer.mu();
            let m = trainer.train_batch(&batch.x, &batch.y)?;
            global += 1;
            let mut r = row(trainer, epoch + 1, global, "batch", m);
            r.mu = mu_used;
            rows.push(r);
            if opts.eval_every > 0 && global % opts.eval_every == 0 && b + 1 != n_batches {
                for e in &evals {
                    rows.push(row(trainer, epoch + 1, global, e.name, trainer.evaluate(e.x, &e.y)?));
                }
            }
        }
        trainer.end_epoch();
        if let Some(y) = &train_y {
            rows.push(row(trainer, epoch + 1, global, "train", trainer.evaluate(&train.features, y)?));
        }
        for e in &evals {
            rows.push(row(trainer, epoch + 1, global, e.name, trainer.evaluate(e.x, &e.y)?));
        }
    }
    Ok(rows)
}

/// The last row for `split`, if any.
pub fn final_row<'a>(rows: &'a [MetricsRow], split: &str) -> Option<&'a MetricsRow> {
    rows.iter().rev().find(|r| r.split == split)
}
