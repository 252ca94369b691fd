//! Backpropagation trainers (SGD with epoch decay, Adam) over the same
//! networks, initialization and shuffling as AM.

use std::fmt;
use std::str::FromStr;

use crate::model::NetworkState;
use crate::numerics::{activate_grad_matrix, activate_matrix, cross_entropy_rows};
use crate::optim::{sgd_step, Adam};
use crate::training::{BatchMetrics, Trainer};
use crate::{Error, Matrix, Result, Scalar};

/// Gradients of the mean multinomial loss with respect to every weight
/// matrix, plus the loss and number of correct predictions of the same
/// forward pass.
pub struct Backprop<T> {
    pub grads: Vec<Matrix<T>>,
    pub loss: T,
    pub correct: usize,
}

pub fn backprop<T: Scalar>(net: &NetworkState<T>, x: &Matrix<T>, y: &Matrix<T>) -> Result<Backprop<T>> {
    let big_l = net.num_hidden();
    for l in 1..=big_l {
        if !net.activation(l).is_differentiable() {
            return Err(Error::UnsupportedDerivative(net.activation(l)));
        }
    }
    let codes = net.encode_input(x)?;
    let inputs: Vec<Matrix<T>> = (0..=big_l).map(|l| net.layer_input(x, &codes, l)).collect();
    let ce = cross_entropy_rows(&inputs[big_l].matmul_t(net.output_weight())?, y)?;

    let mut grads = vec![Matrix::zeros(0, 0); big_l + 1];
    let mut delta = ce.grad_logits;
    grads[big_l] = delta.t_matmul(&inputs[big_l])?;
    for l in (1..=big_l).rev() {
        let back = delta.matmul(net.weight(l + 1))?;
        delta = back.hadamard(&activate_grad_matrix(net.activation(l), &codes.codes[l - 1])?)?;
        grads[l - 1] = delta.t_matmul(&inputs[l - 1])?;
    }
    Ok(Backprop {
        grads,
        loss: ce.mean_loss,
        correct: ce.correct,
    })
}

/// Exact gradients of the mean loss for every `W^l`, `l = 1..=L+1`.
pub fn backprop_grads<T: Scalar>(net: &NetworkState<T>, x: &Matrix<T>, y: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
    Ok(backprop(net, x, y)?.grads)
}

/// Mean loss of a plain forward pass; the objective `backprop_grads`
/// differentiates.
pub fn mean_loss<T: Scalar>(net: &NetworkState<T>, x: &Matrix<T>, y: &Matrix<T>) -> Result<T> {
    let codes = net.encode_input(x)?;
    let a = activate_matrix(net.activation(net.num_hidden()), &codes.codes[net.num_hidden() - 1]);
    Ok(cross_entropy_rows(&a.matmul_t(net.output_weight())?, y)?.mean_loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineAlgo {
    Sgd,
    Adam,
}

impl BaselineAlgo {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }
}

impl fmt::Display for BaselineAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidConfig(format!("unknown baseline '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub algo: BaselineAlgo,
    pub lr: f64,
    /// SGD learning-rate factor applied after every epoch.
    pub sgd_epoch_decay: f64,
}

impl BaselineConfig {
    pub fn new(algo: BaselineAlgo, lr: f64) -> Self {
        Self {
            algo,
            lr,
            sgd_epoch_decay: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.sgd_epoch_decay > 0.0 && self.sgd_epoch_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline needs lr > 0 and decay in (0, 1], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Applies one optimizer step per batch; shared with the BPTT trainer.
#[derive(Clone, Debug)]
pub struct StepRule<T> {
    pub cfg: BaselineConfig,
    lr: f64,
    adam: Vec<Adam<T>>,
}

impl<T: Scalar> StepRule<T> {
    pub fn new(cfg: BaselineConfig, params: &[&Matrix<T>]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            lr: cfg.lr,
            adam: params.iter().map(|p| Adam::for_param(p)).collect(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn apply(&mut self, params: &mut [&mut Matrix<T>], grads: &[Matrix<T>]) -> Result<()> {
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    stage: "backprop gradient",
                    layer: i + 1,
                });
            }
            match self.cfg.algo {
                BaselineAlgo::Sgd => sgd_step(p, g, T::of(self.lr))?,
                BaselineAlgo::Adam => self.adam[i].step(p, g, T::of(self.lr))?,
            }
        }
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        if self.cfg.algo == BaselineAlgo::Sgd {
            self.lr *= self.cfg.sgd_epoch_decay;
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineTrainer<T> {
    pub net: NetworkState<T>,
    rule: StepRule<T>,
}

impl<T: Scalar> BaselineTrainer<T> {
    pub fn new(net: NetworkState<T>, cfg: BaselineConfig) -> Result<Self> {
        let params: Vec<&Matrix<T>> = net.weights().iter().collect();
        let rule = StepRule::new(cfg, &params)?;
        Ok(Self { net, rule })
    }

    pub fn lr(&self) -> f64 {
        self.rule.lr()
    }
}

impl<T: Scalar> Trainer<T> for BaselineTrainer<T> {
    fn algo(&self) -> &'static str {
        self.rule.cfg.algo.name()
    }

    fn train_batch(&mut self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        let bp = backprop(&self.net, x, y)?;
        let mut params: Vec<&mut Matrix<T>> = self.net.weights_mut().iter_mut().collect();
        self.rule.apply(&mut params, &bp.grads)?;
        Ok(BatchMetrics {
            loss: bp.loss.as_f64(),
            accuracy: bp.correct as f64 / x.rows().max(1) as f64,
        })
    }

    fn end_epoch(&mut self) {
        self.rule.end_epoch();
    }

    fn evaluate(&self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        let (loss, correct) = self.net.evaluate(x, y)?;
        Ok(BatchMetrics {
            loss: loss.as_f64(),
            accuracy: correct as f64 / x.rows().max(1) as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altmin::output_weight_gradient;
    use crate::datasets::make_blobs;
    use crate::model::NetworkSpec;
    use crate::numerics::ActivationKind;
    use crate::training::{fit, EvalSet, FitOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn targets(rows: usize, m: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, m, |i, j| if (i * 5 + 1) % m == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let act = [ActivationKind::Tanh, ActivationKind::ReLU, ActivationKind::Identity][seed as usize % 3];
            let net = NetworkState::<f64>::init(NetworkSpec::mlp(4, &[3, 3], 2, act, seed).unwrap()).unwrap();
            let x = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
            let y = targets(5, 2);
            let g = backprop_grads(&net, &x, &y).unwrap();
            let h = 1e-6;
            for l in 0..3 {
                for k in 0..net.weights()[l].as_slice().len() {
                    let mut p = net.clone();
                    p.weights_mut()[l].as_mut_slice()[k] += h;
                    let mut m = net.clone();
                    m.weights_mut()[l].as_mut_slice()[k] -= h;
                    let fd = (mean_loss(&p, &x, &y).unwrap() - mean_loss(&m, &x, &y).unwrap()) / (2.0 * h);
                    let an = g[l].as_slice()[k];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-4), "seed {seed} layer {l}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn zero_input_relu_has_zero_hidden_gradients() {
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(4, &[3, 3], 2, ActivationKind::ReLU, 2).unwrap()).unwrap();
        let g = backprop_grads(&net, &Matrix::zeros(3, 4), &targets(3, 2)).unwrap();
        assert!(g[0].as_slice().iter().chain(g[1].as_slice()).all(|&v| v == 0.0));
    }

    #[test]
    fn last_layer_matches_am_gradient() {
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(4, &[5], 3, ActivationKind::Tanh, 3).unwrap()).unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).sin());
        let y = targets(6, 3);
        let codes = net.encode_input(&x).unwrap();
        let a = net.layer_input(&x, &codes, 1);
        let am = output_weight_gradient(net.output_weight(), &a, &y).unwrap();
        let bp = backprop_grads(&net, &x, &y).unwrap();
        assert!(am.max_abs_diff(&bp[1]).unwrap() < 1e-10);
    }

    #[test]
    fn sign_rejected() {
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(2, &[2], 2, ActivationKind::Sign, 0).unwrap()).unwrap();
        assert!(matches!(
            backprop_grads(&net, &Matrix::zeros(1, 2), &targets(1, 2)),
            Err(Error::UnsupportedDerivative(ActivationKind::Sign))
        ));
    }

    #[test]
    fn sgd_decay_and_zero_epochs() {
        let ds = make_blobs::<f64>(30, 2, 2, 5.0, 1).unwrap();
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(2, &[4], 2, ActivationKind::ReLU, 1).unwrap()).unwrap();
        let mut t = BaselineTrainer::new(net.clone(), BaselineConfig::new(BaselineAlgo::Sgd, 0.5)).unwrap();
        let zero = FitOptions {
            epochs: 0,
            ..FitOptions::default()
        };
        fit(&mut t, &ds, &[], &zero).unwrap();
        assert_eq!(t.net, net);
        let three = FitOptions {
            epochs: 3,
            batch_size: 10,
            ..FitOptions::default()
        };
        fit(&mut t, &ds, &[], &three).unwrap();
        assert!((t.lr() - 0.5 * 0.9f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(3, &[4], 2, ActivationKind::Tanh, 7).unwrap()).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let y = targets(4, 2);
        let g = backprop_grads(&net, &x, &y).unwrap();
        let mut t = BaselineTrainer::new(net.clone(), BaselineConfig::new(BaselineAlgo::Adam, 0.01)).unwrap();
        t.train_batch(&x, &y).unwrap();
        for l in 0..2 {
            for ((new, old), gv) in t.net.weights()[l].as_slice().iter().zip(net.weights()[l].as_slice()).zip(g[l].as_slice()) {
                let expect = old - 0.01 * gv / (gv.abs() + 1e-8);
                assert!((new - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_lr_descends_monotonically() {
        let ds = make_blobs::<f64>(20, 2, 2, 6.0, 1).unwrap();
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(2, &[4], 2, ActivationKind::ReLU, 4).unwrap()).unwrap();
        let mut t = BaselineTrainer::new(net, BaselineConfig::new(BaselineAlgo::Sgd, 0.01)).unwrap();
        let opts = FitOptions {
            epochs: 30,
            batch_size: 20,
            ..FitOptions::default()
        };
        let rows = fit(&mut t, &ds, &[EvalSet { name: "train", data: &ds }], &opts).unwrap();
        let losses: Vec<f64> = rows.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }
}
