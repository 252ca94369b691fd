//! The `gridsearch` command: Cartesian product of list-valued keys, one run
//! per point and seed, ranked by mean final accuracy.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use altmin::training::{final_row, MetricsRow};
use rayon::prelude::*;

use crate::config::{RunConfig, Value};
use crate::error::{CliError, Context, Result};
use crate::presets::expand;
use crate::settings::TrainSettings;
use crate::train::{load_data, metrics_csv, run_training};

pub const RESULTS_FILE: &str = "gridsearch.csv";
pub const RUNS_DIR: &str = "runs";

/// One grid point: the value chosen on every axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub values: Vec<(String, String)>,
}

impl GridPoint {
    fn config(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.values {
            cfg.set_one(k, v)?;
        }
        Ok(cfg)
    }

    pub fn label(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join("; ")
    }
}

/// Outcome of one (point, seed) run. A run that failed numerically keeps
/// its error message and NaN metrics.
#[derive(Clone, Debug)]
pub struct GridRun {
    pub point: usize,
    pub seed: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub rows: Vec<MetricsRow>,
    pub error: Option<String>,
    /// The fully resolved configuration of this run.
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankEntry {
    pub rank: usize,
    pub point: usize,
    pub mean_loss: f64,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct GridReport {
    pub axes: Vec<String>,
    pub points: Vec<GridPoint>,
    pub seeds: Vec<u64>,
    pub runs: Vec<GridRun>,
    pub ranking: Vec<RankEntry>,
}

impl GridReport {
    pub fn best(&self) -> &GridPoint {
        &self.points[self.ranking[0].point]
    }

    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut out = String::new();
        let axes = self.axes.join(",");
        let sep = if axes.is_empty() { "" } else { "," };
        writeln!(out, "{}", cfg.comment_line()).unwrap();
        writeln!(out, "point,seed{sep}{axes},split,loss,accuracy").unwrap();
        for r in &self.runs {
            let vals = self.point_values(r.point);
            writeln!(out, "{},{}{sep}{vals},{},{:?},{:?}", r.point, r.seed, r.split, r.loss, r.accuracy).unwrap();
        }
        for r in self.runs.iter().filter(|r| r.error.is_some()) {
            writeln!(out, "# failed: point {} seed {}: {}", r.point, r.seed, r.error.as_deref().unwrap_or("")).unwrap();
        }
        writeln!(out, "# ranking").unwrap();
        writeln!(out, "rank,point{sep}{axes},mean_loss,mean_accuracy").unwrap();
        for e in &self.ranking {
            let vals = self.point_values(e.point);
            writeln!(out, "{},{}{sep}{vals},{:?},{:?}", e.rank, e.point, e.mean_loss, e.mean_accuracy).unwrap();
        }
        out
    }

    fn point_values(&self, p: usize) -> String {
        self.points[p].values.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(",")
    }
}

/// Grid axes, points in row-major key order, and the seed list.
pub fn expand_grid(cfg: &RunConfig) -> Result<(Vec<String>, Vec<GridPoint>, Vec<u64>)> {
    let lists = cfg.lists();
    if lists.is_empty() {
        return Err(CliError::config("gridsearch needs at least one list-valued key"));
    }
    let seeds: Vec<u64> = match cfg.get("seed") {
        Some(Value::List(items)) => items
            .iter()
            .map(|s| s.parse().map_err(|e| CliError::config(format!("seed = {s}: {e}"))))
            .collect::<Result<_>>()?,
        Some(Value::One(s)) => vec![s.parse().map_err(|e| CliError::config(format!("seed = {s}: {e}")))?],
        None => vec![0],
    };
    let axes: Vec<(&str, &[String])> = lists.into_iter().filter(|(k, _)| *k != "seed").collect();
    let mut points = vec![GridPoint { values: Vec::new() }];
    for (key, items) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                items.iter().map(move |v| {
                    let mut values = p.values.clone();
                    values.push((key.to_string(), v.clone()));
                    GridPoint { values }
                })
            })
            .collect();
    }
    if points.is_empty() || seeds.is_empty() {
        return Err(CliError::config("empty grid"));
    }
    Ok((axes.iter().map(|(k, _)| k.to_string()).collect(), points, seeds))
}

fn run_point(cfg: &RunConfig, point: usize, seed: u64) -> Result<GridRun> {
    let s = TrainSettings::from_config(cfg)?;
    let data = load_data(&s)?;
    let split = if data.val.is_some() {
        "val"
    } else if data.test.is_some() {
        "test"
    } else {
        return Err(CliError::config("gridsearch needs a val or test split to rank on"));
    };
    let mut run = GridRun {
        point,
        seed,
        split: split.to_string(),
        loss: f64::NAN,
        accuracy: f64::NAN,
        rows: Vec::new(),
        error: None,
        config: s.to_config(),
    };
    match run_training(&s, &data) {
        Ok(t) => {
            let last = final_row(&t.rows, split).expect("every run evaluates its eval sets");
            run.loss = last.loss;
            run.accuracy = last.accuracy;
            run.rows = t.rows;
        }
        // a diverged point is a result, not a reason to abort the grid
        Err(CliError::Core { context, source }) => run.error = Some(format!("{context}: {source}")),
        Err(e) => return Err(e),
    }
    Ok(run)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Higher accuracy first, then lower loss; NaN ranks last.
fn compare_scores(a: (f64, f64), b: (f64, f64)) -> Ordering {
    let desc = |x: f64, y: f64| match (x.is_nan(), y.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => y.partial_cmp(&x).unwrap(),
    };
    desc(a.0, b.0).then_with(|| desc(-a.1, -b.1))
}

pub fn run_grid(cfg: &RunConfig) -> Result<GridReport> {
    let (axes, points, seeds) = expand_grid(cfg)?;
    let mut base = cfg.clone();
    for a in &axes {
        base.remove(a);
    }
    base.remove("seed");
    let configs: Vec<RunConfig> = points.iter().map(|p| expand(&p.config(&base)?)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let runs: Vec<GridRun> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let mut c = configs[p].clone();
            c.set_one("seed", seed)?;
            run_point(&c, p, seed)
        })
        .collect::<Result<_>>()?;

    let keys: Vec<String> = configs.iter().map(RunConfig::canonical).collect();
    let mut ranking: Vec<RankEntry> = (0..points.len())
        .map(|p| {
            let mine = runs.iter().filter(|r| r.point == p);
            RankEntry {
                rank: 0,
                point: p,
                mean_loss: mean(mine.clone().map(|r| r.loss)),
                mean_accuracy: mean(mine.map(|r| r.accuracy)),
            }
        })
        .collect();
    ranking.sort_by(|a, b| {
        compare_scores((a.mean_accuracy, a.mean_loss), (b.mean_accuracy, b.mean_loss))
            .then_with(|| keys[a.point].cmp(&keys[b.point]))
    });
    for (i, e) in ranking.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(GridReport {
        axes,
        points,
        seeds,
        runs,
        ranking,
    })
}

/// Runs the grid and writes `gridsearch.csv` plus one metrics file per run
/// under `runs/`.
pub fn cmd_gridsearch(cfg: &RunConfig, out: &Path) -> Result<GridReport> {
    let report = run_grid(cfg)?;
    let runs_dir = out.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir).context(|| runs_dir.display().to_string())?;
    for r in &report.runs {
        let path = runs_dir.join(format!("point{}-seed{}.csv", r.point, r.seed));
        fs::write(&path, metrics_csv(&r.config, &r.rows)).context(|| path.display().to_string())?;
    }
    let path = out.join(RESULTS_FILE);
    fs::write(&path, report.to_csv(cfg)).context(|| path.display().to_string())?;
    Ok(report)
}
