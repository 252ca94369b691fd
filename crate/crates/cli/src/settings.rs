//! Typed view of a training configuration, with defaults filled in.

use std::path::PathBuf;

use altmin::altmin::{AmConfig, AmVariant, MuSchedule};
use altmin::baselines::{BaselineAlgo, BaselineConfig};
use altmin::training::FitOptions;
use altmin::ActivationKind;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mnist { dir: PathBuf },
    Blobs { n: usize, dim: usize, classes: usize, separation: f64 },
    Csv { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Mlp { hidden: Vec<usize>, activations: Vec<ActivationKind> },
    Rnn { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Sgd,
    Adam,
    AmAdam,
    AmMem,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Sgd => "sgd",
            Algo::Adam => "adam",
            Algo::AmAdam => "am-adam",
            Algo::AmMem => "am-mem",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sgd" => Algo::Sgd,
            "adam" => Algo::Adam,
            "am-adam" => Algo::AmAdam,
            "am-mem" => Algo::AmMem,
            other => {
                return Err(CliError::config(format!(
                    "algo = {other}: expected one of sgd, adam, am-adam, am-mem"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub data: DataSource,
    /// Keep the first `train_size` training samples (0 keeps all).
    pub train_size: usize,
    pub test_size: usize,
    /// Fraction of the training samples held out as `val`.
    pub val_fraction: f64,
    pub split_seed: u64,
    /// Average-pooling factor for 28x28 images (1 = none).
    pub pool: usize,
    pub model: ModelKind,
    pub algo: Algo,
    pub lr: f64,
    pub code_lr: f64,
    pub code_iters: usize,
    pub weight_iters: usize,
    pub mu: MuSchedule,
    pub sgd_decay: f64,
    pub fit: FitOptions,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split('-')
        .map(|p| {
            p.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::config(format!("hidden = {s}: expected widths like 100-100")))
        })
        .collect()
}

fn parse_activations(s: &str, layers: usize) -> Result<Vec<ActivationKind>> {
    let kinds = s
        .split('-')
        .map(|p| p.parse::<ActivationKind>().map_err(|e| CliError::config(format!("activation = {s}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    match kinds.len() {
        1 => Ok(vec![kinds[0]; layers]),
        n if n == layers => Ok(kinds),
        n => Err(CliError::config(format!(
            "activation = {s}: {n} entries for {layers} hidden layers"
        ))),
    }
}

impl TrainSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let data = match cfg.require("dataset")? {
            "mnist" => DataSource::Mnist {
                dir: PathBuf::from(cfg.str("data_dir")?.unwrap_or("data/mnist")),
            },
            "blobs" => DataSource::Blobs {
                n: cfg.or("blobs_n", 600)?,
                dim: cfg.or("blobs_dim", 2)?,
                classes: cfg.or("blobs_classes", 2)?,
                separation: cfg.or("blobs_separation", 4.0)?,
            },
            "csv" => DataSource::Csv {
                train: PathBuf::from(cfg.require("train_path")?),
                test: cfg.str("test_path")?.map(PathBuf::from),
            },
            other => {
                return Err(CliError::config(format!(
                    "dataset = {other}: expected mnist, blobs or csv"
                )))
            }
        };
        let model = match cfg.str("model")?.unwrap_or("mlp") {
            "mlp" => {
                let hidden = parse_sizes(cfg.str("hidden")?.unwrap_or("100-100"))?;
                let activations = parse_activations(cfg.str("activation")?.unwrap_or("relu"), hidden.len())?;
                ModelKind::Mlp { hidden, activations }
            }
            "rnn" => ModelKind::Rnn {
                hidden: cfg.or("rnn_hidden", 15)?,
            },
            other => return Err(CliError::config(format!("model = {other}: expected mlp or rnn"))),
        };
        let val_fraction: f64 = cfg.or("val_fraction", 0.0)?;
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(CliError::config(format!("val_fraction = {val_fraction}: expected [0, 1)")));
        }
        let batch_size: usize = cfg.or("batch_size", 200)?;
        if batch_size == 0 {
            return Err(CliError::config("batch_size must be positive"));
        }
        let s = TrainSettings {
            data,
            train_size: cfg.or("train_size", 0)?,
            test_size: cfg.or("test_size", 0)?,
            val_fraction,
            split_seed: cfg.or("split_seed", 0)?,
            pool: cfg.or("pool", 1)?,
            model,
            algo: Algo::parse(cfg.require("algo")?)?,
            lr: cfg.or("lr", 1e-3)?,
            code_lr: cfg.or("code_lr", 0.1)?,
            code_iters: cfg.or("code_iters", 1)?,
            weight_iters: cfg.or("weight_iters", 1)?,
            mu: MuSchedule {
                mu0: cfg.or("mu", 0.01)?,
                batch_increment: cfg.or("mu_increment", 0.0)?,
                epoch_multiplier: cfg.or("mu_multiplier", 1.0)?,
                mu_max: cfg.or("mu_max", 1.5)?,
            },
            sgd_decay: cfg.or("sgd_decay", 0.9)?,
            fit: FitOptions {
                epochs: cfg.or("epochs", 10)?,
                batch_size,
                seed: cfg.or("seed", 0)?,
                eval_every: cfg.or("eval_every", 0)?,
                eval_train: cfg.or("eval_train", false)?,
            },
        };
        if s.pool == 0 {
            return Err(CliError::config("pool must be positive"));
        }
        if matches!(s.model, ModelKind::Rnn { .. }) && s.algo == Algo::AmMem {
            return Err(CliError::config("am-mem is not available for model = rnn"));
        }
        s.am_config().validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(s)
    }

    pub fn am_config(&self) -> AmConfig {
        AmConfig {
            variant: if self.algo == Algo::AmMem { AmVariant::AmMem } else { AmVariant::AmAdam },
            weight_lr: self.lr,
            code_lr: self.code_lr,
            code_iters: self.code_iters,
            weight_iters: self.weight_iters,
            mu: self.mu,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            algo: if self.algo == Algo::Sgd { BaselineAlgo::Sgd } else { BaselineAlgo::Adam },
            lr: self.lr,
            sgd_epoch_decay: self.sgd_decay,
        }
    }

    /// Every setting as a config, so a run can be repeated from its own
    /// metrics file.
    pub fn to_config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        let mut put = |k: &str, v: String| c.set_one(k, v).expect("known key");
        match &self.data {
            DataSource::Mnist { dir } => {
                put("dataset", "mnist".into());
                put("data_dir", dir.display().to_string());
            }
            DataSource::Blobs { n, dim, classes, separation } => {
                put("dataset", "blobs".into());
                put("blobs_n", n.to_string());
                put("blobs_dim", dim.to_string());
                put("blobs_classes", classes.to_string());
                put("blobs_separation", format!("{separation:?}"));
            }
            DataSource::Csv { train, test } => {
                put("dataset", "csv".into());
                put("train_path", train.display().to_string());
                if let Some(t) = test {
                    put("test_path", t.display().to_string());
                }
            }
        }
        put("train_size", self.train_size.to_string());
        put("test_size", self.test_size.to_string());
        put("val_fraction", format!("{:?}", self.val_fraction));
        put("split_seed", self.split_seed.to_string());
        put("pool", self.pool.to_string());
        match &self.model {
            ModelKind::Mlp { hidden, activations } => {
                put("model", "mlp".into());
                put("hidden", hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-"));
                put("activation", activations.iter().map(|a| a.name()).collect::<Vec<_>>().join("-"));
            }
            ModelKind::Rnn { hidden } => {
                put("model", "rnn".into());
                put("rnn_hidden", hidden.to_string());
            }
        }
        put("algo", self.algo.name().into());
        put("lr", format!("{:?}", self.lr));
        match self.algo {
            Algo::AmAdam | Algo::AmMem => {
                put("code_lr", format!("{:?}", self.code_lr));
                put("code_iters", self.code_iters.to_string());
                put("weight_iters", self.weight_iters.to_string());
                put("mu", format!("{:?}", self.mu.mu0));
                put("mu_increment", format!("{:?}", self.mu.batch_increment));
                put("mu_multiplier", format!("{:?}", self.mu.epoch_multiplier));
                put("mu_max", format!("{:?}", self.mu.mu_max));
            }
            Algo::Sgd => put("sgd_decay", format!("{:?}", self.sgd_decay)),
            Algo::Adam => {}
        }
        put("batch_size", self.fit.batch_size.to_string());
        put("epochs", self.fit.epochs.to_string());
        put("seed", self.fit.seed.to_string());
        put("eval_every", self.fit.eval_every.to_string());
        put("eval_train", self.fit.eval_train.to_string());
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::parse("dataset = blobs\nalgo = am-adam\nhidden = 8\nactivation = tanh").unwrap();
        let s = TrainSettings::from_config(&cfg).unwrap();
        assert_eq!(s.fit.batch_size, 200);
        assert_eq!(s.mu.mu0, 0.01);
        assert_eq!(
            s.model,
            ModelKind::Mlp {
                hidden: vec![8],
                activations: vec![ActivationKind::Tanh]
            }
        );
        let again = TrainSettings::from_config(&s.to_config()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn per_layer_activations() {
        let cfg = RunConfig::parse("dataset = mnist\nalgo = am-adam\nhidden = 100-100\nactivation = sign-relu").unwrap();
        let s = TrainSettings::from_config(&cfg).unwrap();
        let ModelKind::Mlp { activations, .. } = s.model else { panic!() };
        assert_eq!(activations, vec![ActivationKind::Sign, ActivationKind::ReLU]);
        let bad = RunConfig::parse("dataset = mnist\nalgo = sgd\nhidden = 10-10-10\nactivation = relu-tanh").unwrap();
        assert!(TrainSettings::from_config(&bad).is_err());
    }

    #[test]
    fn rejects_invalid_settings() {
        for text in [
            "algo = sgd",
            "dataset = mnist",
            "dataset = imagenet\nalgo = sgd",
            "dataset = blobs\nalgo = rmsprop",
            "dataset = blobs\nalgo = sgd\nbatch_size = 0",
            "dataset = blobs\nalgo = am-adam\nmu = -1",
            "dataset = blobs\nalgo = am-mem\nmodel = rnn",
            "dataset = blobs\nalgo = sgd\nval_fraction = 1.5",
            "dataset = csv\nalgo = sgd",
        ] {
            let cfg = RunConfig::parse(text).unwrap();
            assert!(TrainSettings::from_config(&cfg).is_err(), "{text}");
        }
    }
}
