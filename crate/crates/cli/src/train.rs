//! The `train` command: data loading, trainer construction, metrics CSV and
//! checkpoint output.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use altmin::datasets::{load_mnist, make_blobs, pool_sequence, read_csv_unscaled, split, SplitSpec, Standardizer};
use altmin::model::{write_checkpoint, write_rnn_checkpoint, NetworkSpec};
use altmin::rnn::{BpttTrainer, RnnAmTrainer};
use altmin::training::{fit, BatchMetrics, EvalSet, MetricsRow, Trainer, METRICS_HEADER};
use altmin::{AmTrainer, BaselineTrainer, Dataset, ElmanState, Matrix, NetworkState};

use crate::config::RunConfig;
use crate::error::{Context, Result};
use crate::settings::{Algo, DataSource, ModelKind, TrainSettings};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

const MNIST_SIDE: usize = 28;

/// Training, optional validation and optional test sets, ready for the model.
pub struct Splits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl Splits {
    pub fn eval_sets(&self) -> Vec<EvalSet<'_, f64>> {
        let mut sets = Vec::new();
        if let Some(v) = &self.val {
            sets.push(EvalSet { name: "val", data: v });
        }
        if let Some(t) = &self.test {
            sets.push(EvalSet { name: "test", data: t });
        }
        sets
    }
}

fn keep(ds: Dataset, n: usize) -> Dataset {
    if n == 0 || n >= ds.len() {
        ds
    } else {
        ds.head(n)
    }
}

fn pooled(ds: Dataset, k: usize) -> Result<Dataset> {
    let x = pool_sequence(&ds.features, MNIST_SIDE, MNIST_SIDE, k).context(|| format!("pool = {k}"))?;
    ds.with_features(x).context(|| "pooling".into())
}

pub fn load_data(s: &TrainSettings) -> Result<Splits> {
    let (train, test) = match &s.data {
        DataSource::Mnist { dir } => {
            let (train, test) = load_mnist(dir).context(|| format!("loading MNIST from {}", dir.display()))?;
            (train, Some(test))
        }
        DataSource::Blobs { n, dim, classes, separation } => {
            let gen = |seed| make_blobs(*n, *dim, *classes, *separation, seed).context(|| "blobs".into());
            (gen(s.split_seed)?, Some(gen(s.split_seed.wrapping_add(1))?))
        }
        DataSource::Csv { train, test } => {
            let tr = read_csv_unscaled(train).context(|| train.display().to_string())?;
            let te = match test {
                Some(p) => Some(read_csv_unscaled(p).context(|| p.display().to_string())?),
                None => None,
            };
            (tr, te)
        }
    };
    let train = keep(train, s.train_size);
    let test = test.map(|t| keep(t, s.test_size));
    let (mut train, mut val) = if s.val_fraction > 0.0 {
        let spec = SplitSpec {
            train_fraction: 1.0 - s.val_fraction,
            seed: s.split_seed,
        };
        let (a, b) = split(&train, spec).context(|| "validation split".into())?;
        (a, Some(b))
    } else {
        (train, None)
    };
    let mut test = test;

    if matches!(s.data, DataSource::Csv { .. }) {
        // statistics from the training part only
        let st = Standardizer::fit(&train.features);
        let scale = |d: Dataset| -> Result<Dataset> {
            let x = st.apply(&d.features).context(|| "standardizing".into())?;
            d.with_features(x).context(|| "standardizing".into())
        };
        train = scale(train)?;
        val = val.map(scale).transpose()?;
        test = test.map(scale).transpose()?;
    }
    if s.pool > 1 {
        if !matches!(s.data, DataSource::Mnist { .. }) {
            return Err(crate::error::CliError::config("pool > 1 requires dataset = mnist"));
        }
        train = pooled(train, s.pool)?;
        val = val.map(|d| pooled(d, s.pool)).transpose()?;
        test = test.map(|d| pooled(d, s.pool)).transpose()?;
    }
    Ok(Splits { train, val, test })
}

/// Every trainer the command line can select.
pub enum AnyTrainer {
    Am(AmTrainer),
    Baseline(BaselineTrainer),
    RnnAm(RnnAmTrainer<f64>),
    Bptt(BpttTrainer<f64>),
}

impl AnyTrainer {
    fn inner(&self) -> &dyn Trainer<f64> {
        match self {
            AnyTrainer::Am(t) => t,
            AnyTrainer::Baseline(t) => t,
            AnyTrainer::RnnAm(t) => t,
            AnyTrainer::Bptt(t) => t,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Trainer<f64> {
        match self {
            AnyTrainer::Am(t) => t,
            AnyTrainer::Baseline(t) => t,
            AnyTrainer::RnnAm(t) => t,
            AnyTrainer::Bptt(t) => t,
        }
    }

    pub fn network(&self) -> Option<&NetworkState> {
        match self {
            AnyTrainer::Am(t) => Some(&t.net),
            AnyTrainer::Baseline(t) => Some(&t.net),
            _ => None,
        }
    }

    pub fn rnn(&self) -> Option<&ElmanState> {
        match self {
            AnyTrainer::RnnAm(t) => Some(&t.state),
            AnyTrainer::Bptt(t) => Some(&t.state),
            _ => None,
        }
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).context(|| path.display().to_string())?;
        let out = BufWriter::new(file);
        let res = match (self.network(), self.rnn()) {
            (Some(net), _) => write_checkpoint(net, out),
            (_, Some(st)) => write_rnn_checkpoint(st, out),
            _ => unreachable!("every trainer holds a model"),
        };
        res.context(|| path.display().to_string())
    }
}

impl Trainer<f64> for AnyTrainer {
    fn algo(&self) -> &'static str {
        self.inner().algo()
    }
    fn mu(&self) -> f64 {
        self.inner().mu()
    }
    fn train_batch(&mut self, x: &Matrix<f64>, y: &Matrix<f64>) -> altmin::Result<BatchMetrics> {
        self.inner_mut().train_batch(x, y)
    }
    fn end_epoch(&mut self) {
        self.inner_mut().end_epoch()
    }
    fn evaluate(&self, x: &Matrix<f64>, y: &Matrix<f64>) -> altmin::Result<BatchMetrics> {
        self.inner().evaluate(x, y)
    }
}

/// Builds the model, initialized from the run seed, and its trainer.
pub fn build_trainer(s: &TrainSettings, input: usize, classes: usize) -> Result<AnyTrainer> {
    let seed = s.fit.seed;
    let am = matches!(s.algo, Algo::AmAdam | Algo::AmMem);
    Ok(match &s.model {
        ModelKind::Mlp { hidden, activations } => {
            let mut sizes = vec![input];
            sizes.extend(hidden);
            sizes.push(classes);
            let spec = NetworkSpec::new(sizes, activations.clone(), seed).context(|| "network".into())?;
            let net = NetworkState::init(spec).context(|| "network".into())?;
            if am {
                AnyTrainer::Am(AmTrainer::new(net, s.am_config()).context(|| "am trainer".into())?)
            } else {
                AnyTrainer::Baseline(BaselineTrainer::new(net, s.baseline_config()).context(|| "baseline trainer".into())?)
            }
        }
        ModelKind::Rnn { hidden } => {
            let st = ElmanState::init(*hidden, 1, input, classes, seed).context(|| "rnn".into())?;
            if am {
                AnyTrainer::RnnAm(RnnAmTrainer::new(st, s.am_config()).context(|| "rnn trainer".into())?)
            } else {
                AnyTrainer::Bptt(BpttTrainer::new(st, s.baseline_config()).context(|| "bptt trainer".into())?)
            }
        }
    })
}

pub struct TrainRun {
    pub rows: Vec<MetricsRow>,
    pub trainer: AnyTrainer,
}

pub fn run_training(s: &TrainSettings, data: &Splits) -> Result<TrainRun> {
    let train = &data.train;
    let mut trainer = build_trainer(s, train.dim(), train.num_classes)?;
    let rows = fit(&mut trainer, train, &data.eval_sets(), &s.fit).context(|| format!("training {}", s.algo.name()))?;
    Ok(TrainRun { rows, trainer })
}

/// The metrics file body: the resolved config as a comment line, the header,
/// then one line per row.
pub fn metrics_csv(cfg: &RunConfig, rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{}", cfg.comment_line()).unwrap();
    writeln!(out, "{}", METRICS_HEADER.join(",")).unwrap();
    for r in rows {
        writeln!(out, "{}", r.fields().join(",")).unwrap();
    }
    out
}

/// Runs one configuration and writes `metrics.csv` and `model.ckpt` into
/// `out`. Returns the metrics rows.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<MetricsRow>> {
    let s = TrainSettings::from_config(cfg)?;
    let data = load_data(&s)?;
    let run = run_training(&s, &data)?;
    fs::create_dir_all(out).context(|| out.display().to_string())?;
    let path = out.join(METRICS_FILE);
    fs::write(&path, metrics_csv(&s.to_config(), &run.rows)).context(|| path.display().to_string())?;
    run.trainer.write_checkpoint(&out.join(CHECKPOINT_FILE))?;
    Ok(run.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(extra: &str) -> RunConfig {
        let mut cfg = RunConfig::parse("dataset = blobs\nblobs_n = 120\nhidden = 6\nbatch_size = 20\nepochs = 2").unwrap();
        cfg.overlay(&RunConfig::parse(extra).unwrap());
        cfg
    }

    #[test]
    fn every_algo_learns_blobs() {
        for (algo, lr) in [("sgd", 0.2), ("adam", 0.05), ("am-adam", 0.05), ("am-mem", 0.05)] {
            let cfg = blobs(&format!("algo = {algo}\nlr = {lr}\nepochs = 20\nsgd_decay = 1"));
            let s = TrainSettings::from_config(&cfg).unwrap();
            let run = run_training(&s, &load_data(&s).unwrap()).unwrap();
            let last = run.rows.last().unwrap();
            assert_eq!(last.split, "test");
            assert!(last.accuracy > 0.8, "{algo}: {last:?}");
        }
    }

    #[test]
    fn zero_epochs_gives_only_initial_rows() {
        let s = TrainSettings::from_config(&blobs("algo = adam\nepochs = 0")).unwrap();
        let run = run_training(&s, &load_data(&s).unwrap()).unwrap();
        assert_eq!(run.rows.len(), 1);
        assert_eq!(run.rows[0].batch, 0);
    }

    #[test]
    fn val_split_adds_val_rows() {
        let s = TrainSettings::from_config(&blobs("algo = adam\nval_fraction = 0.25")).unwrap();
        let data = load_data(&s).unwrap();
        assert_eq!(data.train.len(), 90);
        assert_eq!(data.val.as_ref().unwrap().len(), 30);
        let run = run_training(&s, &data).unwrap();
        assert!(run.rows.iter().any(|r| r.split == "val"));
    }

    #[test]
    fn csv_header_and_config_line() {
        let cfg = blobs("algo = sgd");
        let s = TrainSettings::from_config(&cfg).unwrap();
        let run = run_training(&s, &load_data(&s).unwrap()).unwrap();
        let text = metrics_csv(&s.to_config(), &run.rows);
        let mut lines = text.lines();
        let back = RunConfig::from_comment_line(lines.next().unwrap()).unwrap();
        assert_eq!(TrainSettings::from_config(&back).unwrap(), s);
        assert_eq!(lines.next().unwrap(), "epoch,batch,split,loss,accuracy,mu,algo,seed");
        assert_eq!(lines.count(), run.rows.len());
    }
}
