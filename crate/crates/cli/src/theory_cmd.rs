//! The `theory` command: builds a block quadratic problem, runs a stochastic
//! AM ensemble and checks both error bounds at every iteration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use altmin::theory::{
    check_final_rate, check_noiseless_decay, check_recursion, make_quadratic_problem, run_ensemble, theory_rows,
    FinalRateReport, TheoryRow, SLOPE_RANGE,
};

use crate::config::RunConfig;
use crate::error::{CliError, Context, Result};

pub const THEORY_FILE: &str = "theory.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TheorySettings {
    pub blocks: usize,
    pub block_dim: usize,
    pub lambda: f64,
    pub coupling: f64,
    pub noise: f64,
    pub radius: f64,
    pub ensemble: usize,
    pub iterations: usize,
    pub problem_seed: u64,
    pub seed: u64,
}

impl TheorySettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let s = TheorySettings {
            blocks: cfg.or("blocks", 2)?,
            block_dim: cfg.or("block_dim", 5)?,
            lambda: cfg.or("lambda", 1.0)?,
            coupling: cfg.or("coupling", 0.1)?,
            noise: cfg.or("noise", 0.5)?,
            radius: cfg.or("radius", 2.0)?,
            ensemble: cfg.or("ensemble", 200)?,
            iterations: cfg.or("iterations", 2000)?,
            problem_seed: cfg.or("problem_seed", 7)?,
            seed: cfg.or("seed", 0)?,
        };
        if s.iterations == 0 || s.ensemble == 0 {
            return Err(CliError::config("iterations and ensemble must be positive"));
        }
        if !(s.radius > 0.0) || !(s.noise >= 0.0) {
            return Err(CliError::config("radius must be positive and noise non-negative"));
        }
        Ok(s)
    }

    pub fn to_config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        let mut put = |k: &str, v: String| c.set_one(k, v).expect("known key");
        put("blocks", self.blocks.to_string());
        put("block_dim", self.block_dim.to_string());
        put("lambda", format!("{:?}", self.lambda));
        put("coupling", format!("{:?}", self.coupling));
        put("noise", format!("{:?}", self.noise));
        put("radius", format!("{:?}", self.radius));
        put("ensemble", self.ensemble.to_string());
        put("iterations", self.iterations.to_string());
        put("problem_seed", self.problem_seed.to_string());
        put("seed", self.seed.to_string());
        c
    }
}

#[derive(Clone, Debug)]
pub struct TheoryOutcome {
    pub settings: TheorySettings,
    pub rows: Vec<TheoryRow>,
    pub final_rate: FinalRateReport,
    /// For noiseless problems: every row passed the pure decay bound too.
    pub noiseless_decay: Option<bool>,
}

impl TheoryOutcome {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.slope_checked_ok() && self.noiseless_decay.unwrap_or(true)
    }

    /// The slope criterion only applies to noisy runs, where the O(1/t)
    /// term dominates.
    fn slope_checked_ok(&self) -> bool {
        self.settings.noise == 0.0 || self.final_rate.slope_ok()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.settings.to_config().comment_line()).unwrap();
        writeln!(out, "t,mean_error,recursion_rhs,final_rhs,pass").unwrap();
        for r in &self.rows {
            writeln!(out, "{},{:?},{:?},{:?},{}", r.t, r.mean_error, r.recursion_rhs, r.bound_rhs, r.pass).unwrap();
        }
        writeln!(
            out,
            "# slope: {:?} (range [{}, {}]{})",
            self.final_rate.slope,
            SLOPE_RANGE.0,
            SLOPE_RANGE.1,
            if self.settings.noise == 0.0 { ", not checked without noise" } else { "" }
        )
        .unwrap();
        if let Some(ok) = self.noiseless_decay {
            writeln!(out, "# noiseless decay: {}", if ok { "pass" } else { "fail" }).unwrap();
        }
        writeln!(out, "# result: {}", if self.passed() { "pass" } else { "fail" }).unwrap();
        out
    }
}

pub fn run_theory(s: &TheorySettings) -> Result<TheoryOutcome> {
    let dims = vec![s.block_dim; s.blocks];
    let p = make_quadratic_problem(s.blocks, &dims, s.lambda, s.coupling, s.problem_seed)
        .context(|| "theory problem".into())?
        .with_noise(s.noise)
        .with_radii(s.radius);
    let traces = run_ensemble(&p, s.iterations, s.ensemble, s.seed).context(|| "ensemble".into())?;
    let rec = check_recursion(&traces, &p).context(|| "recursion check".into())?;
    let fin = check_final_rate(&traces, &p).context(|| "final rate check".into())?;
    let noiseless_decay = if s.noise == 0.0 {
        Some(check_noiseless_decay(&traces).context(|| "noiseless decay".into())?.passed())
    } else {
        None
    };
    Ok(TheoryOutcome {
        settings: s.clone(),
        rows: theory_rows(&rec, &fin),
        final_rate: fin,
        noiseless_decay,
    })
}

/// Writes `theory.csv`; a failed bound is reported as [`CliError::Check`]
/// after the file is written.
pub fn cmd_theory(cfg: &RunConfig, out: &Path) -> Result<TheoryOutcome> {
    let s = TheorySettings::from_config(cfg)?;
    let outcome = run_theory(&s)?;
    fs::create_dir_all(out).context(|| out.display().to_string())?;
    let path = out.join(THEORY_FILE);
    fs::write(&path, outcome.to_csv()).context(|| path.display().to_string())?;
    if !outcome.passed() {
        let bad = outcome.rows.iter().filter(|r| !r.pass).count();
        return Err(CliError::Check(format!(
            "theory bounds: {bad} of {} rows failed, slope {:.3}",
            outcome.rows.len(),
            outcome.final_rate.slope
        )));
    }
    Ok(outcome)
}
