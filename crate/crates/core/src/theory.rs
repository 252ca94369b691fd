//! Empirical check of the stochastic alternating-minimization convergence
//! theorems on block quadratics with known constants.
//!
//! The theorems maximize a concave `L`; here the iteration is written as
//! descent on `f = −L`, i.e. `θ_d ← Π_d(θ_d − η ∇_d f¹)`, which is the same
//! update as ascent on `L`. Everything in this module is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::numerics::symmetric_eigenvalues;
use crate::{Error, Matrix, Result};

/// Minimum ensemble size for the Monte-Carlo checks on noisy problems.
/// Noiseless runs obey the bounds pathwise, so one trace is enough there.
pub const MIN_TRACES: usize = 200;

/// Tolerance, in Monte-Carlo standard errors, for the expectation bounds.
pub const MC_STD_ERRORS: f64 = 3.0;

/// `f(θ) = ½Σ_d λ_d‖Δ_d‖² + Σ_{d<e} Δ_dᵀ Γ_{de} Δ_e` with `Δ_d = θ_d − θ_d*`.
#[derive(Clone, Debug)]
pub struct TheoryProblem {
    pub k: usize,
    pub dims: Vec<usize>,
    pub theta_star: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub radii: Vec<f64>,
    pub noise_sigma: f64,
    /// `coupling[d][e]` is `Γ_{de}` (`dims[d] x dims[e]`); the diagonal is
    /// empty and `Γ_{ed} = Γ_{de}ᵀ`.
    coupling: Vec<Vec<Matrix<f64>>>,
}

fn spectral_norm(m: &Matrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues(&m.t_matmul(m)?)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Block quadratic with `λ_d = μ_d = lambda` and every cross block scaled to
/// spectral norm `coupling`, so `γ_d = (K−1)·coupling`. Radii default to 2
/// and the noise to 0.
pub fn make_quadratic_problem(
    k: usize,
    dims: &[usize],
    lambda: f64,
    coupling: f64,
    seed: u64,
) -> Result<TheoryProblem> {
    if k == 0 || dims.len() != k || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "need {k} positive block dimensions, got {dims:?}"
        )));
    }
    if !(lambda > 0.0) || !(coupling >= 0.0) || !lambda.is_finite() || !coupling.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive and coupling non-negative (lambda={lambda}, coupling={coupling})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_star = dims.iter().map(|&n| normal_vec(&mut rng, n)).collect();
    let mut blocks = vec![vec![Matrix::zeros(0, 0); k]; k];
    for d in 0..k {
        for e in d + 1..k {
            let g = Matrix::from_fn(dims[d], dims[e], |_, _| StandardNormal.sample(&mut rng));
            let n = spectral_norm(&g)?;
            let g = if coupling == 0.0 || n == 0.0 {
                Matrix::zeros(dims[d], dims[e])
            } else {
                g.scale(coupling / n)
            };
            blocks[e][d] = g.transpose();
            blocks[d][e] = g;
        }
    }
    let mut gamma = vec![0.0; k];
    for d in 0..k {
        for e in (0..k).filter(|&e| e != d) {
            gamma[d] += spectral_norm(&blocks[d][e])?;
        }
    }
    let p = TheoryProblem {
        k,
        dims: dims.to_vec(),
        theta_star,
        lambda: vec![lambda; k],
        mu: vec![lambda; k],
        gamma,
        radii: vec![2.0; k],
        noise_sigma: 0.0,
        coupling: blocks,
    };
    p.check_admissible()?;
    Ok(p)
}

impl TheoryProblem {
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_radii(mut self, r: f64) -> Self {
        self.radii = vec![r; self.k];
        self
    }

    /// `ξ = min_d 2μ_dλ_d/(μ_d+λ_d)`.
    pub fn xi(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.mu)
            .map(|(&l, &m)| 2.0 * m * l / (m + l))
            .fold(f64::INFINITY, f64::min)
    }

    /// `γ = max_d γ_d`.
    pub fn gamma_max(&self) -> f64 {
        self.gamma.iter().copied().fold(0.0, f64::max)
    }

    /// Largest admissible `γ`, `2ξ/(3(K−1))`; infinite for one block.
    pub fn gamma_limit(&self) -> f64 {
        if self.k < 2 {
            f64::INFINITY
        } else {
            2.0 * self.xi() / (3.0 * (self.k - 1) as f64)
        }
    }

    pub fn check_admissible(&self) -> Result<()> {
        let ordered = self
            .gamma
            .iter()
            .zip(self.lambda.iter().zip(&self.mu))
            .all(|(&g, (&l, &m))| 0.0 <= g && g < l && l <= m);
        let gamma = self.gamma_max();
        let limit = self.gamma_limit();
        if !ordered || gamma >= limit {
            return Err(Error::Inadmissible { gamma, limit });
        }
        Ok(())
    }

    fn km1(&self) -> f64 {
        (self.k - 1) as f64
    }

    /// `A = 2ξ − 3γ(K−1)`.
    pub fn rate_constant(&self) -> f64 {
        2.0 * self.xi() - 3.0 * self.gamma_max() * self.km1()
    }

    /// `η^t = (3/2) / (A(t+2) + (3/2)(K−1)γ)`.
    pub fn step_size(&self, t: usize) -> f64 {
        1.5 / (self.rate_constant() * (t as f64 + 2.0) + 1.5 * self.km1() * self.gamma_max())
    }

    /// `q^t = 1 − (1 − 2ηξ + 2ηγ(K−1)) / (1 − (K−1)ηγ)`.
    pub fn q(&self, eta: f64) -> f64 {
        let g = self.gamma_max() * self.km1();
        1.0 - (1.0 - 2.0 * eta * self.xi() + 2.0 * eta * g) / (1.0 - eta * g)
    }

    /// `β^t = η² / (1 − (K−1)ηγ)`.
    pub fn beta(&self, eta: f64) -> f64 {
        eta * eta / (1.0 - self.km1() * eta * self.gamma_max())
    }

    /// `σ² = Σ_d sup E‖∇_d f¹‖²` over the balls `B(r_e, θ_e*)`:
    /// `(μ_d r_d + Σ_{e≠d}‖Γ_{de}‖ r_e)² + noise²·dim_d`. The supremum of the
    /// population part is attained for `K ≤ 2` and an upper bound otherwise.
    pub fn sigma_squared(&self) -> Result<f64> {
        let mut total = 0.0;
        for d in 0..self.k {
            let mut g = self.mu[d] * self.radii[d];
            for e in (0..self.k).filter(|&e| e != d) {
                g += spectral_norm(&self.coupling[d][e])? * self.radii[e];
            }
            total += g * g + self.noise_sigma * self.noise_sigma * self.dims[d] as f64;
        }
        Ok(total)
    }

    pub fn deltas(&self, theta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        theta
            .iter()
            .zip(&self.theta_star)
            .map(|(t, s)| t.iter().zip(s).map(|(a, b)| a - b).collect())
            .collect()
    }

    /// Population gradient `∇_d f(θ)`.
    pub fn grad(&self, theta: &[Vec<f64>], d: usize) -> Vec<f64> {
        let deltas = self.deltas(theta);
        let mut g: Vec<f64> = deltas[d].iter().map(|x| self.lambda[d] * x).collect();
        for e in (0..self.k).filter(|&e| e != d) {
            let ge = self.coupling[d][e].matvec(&deltas[e]).expect("block shapes");
            g.iter_mut().zip(ge.iter()).for_each(|(a, b)| *a += b);
        }
        g
    }

    /// `∇_d f` with every other block at its optimum.
    pub fn grad_at_optimum(&self, theta_d: &[f64], d: usize) -> Vec<f64> {
        theta_d
            .iter()
            .zip(&self.theta_star[d])
            .map(|(a, b)| self.lambda[d] * (a - b))
            .collect()
    }

    /// Noiseless population operator `G_d(θ) = θ_d − η∇_d f(θ)`.
    pub fn population_step(&self, theta: &[Vec<f64>], d: usize, eta: f64) -> Vec<f64> {
        theta[d]
            .iter()
            .zip(self.grad(theta, d))
            .map(|(t, g)| t - eta * g)
            .collect()
    }
}

/// One stochastic AM run. Row `t` of `block_errors` holds `‖Δ_d^t‖²` for
/// `t = 0..=T`; `steps[t]` is `η^t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmTrace {
    pub block_errors: Vec<Vec<f64>>,
    pub steps: Vec<f64>,
    pub total: Vec<f64>,
    /// Largest `‖θ_d^t − θ_d^0‖` seen per block.
    pub max_drift: Vec<f64>,
}

fn project(v: &mut [f64], center: &[f64], radius: f64) {
    let off: Vec<f64> = v.iter().zip(center).map(|(a, b)| a - b).collect();
    let n = norm(&off);
    if n > radius {
        let s = radius / n;
        for ((x, c), o) in v.iter_mut().zip(center).zip(off) {
            *x = c + s * o;
        }
    }
}

/// Start uniformly inside `B(r_d/2, θ_d*)`, then cycle the blocks `1..K` for
/// `iterations` rounds with step `η^t` and Gaussian gradient noise,
/// projecting onto `B(r_d/2, θ_d^0)`.
pub fn stochastic_am_run(p: &TheoryProblem, iterations: usize, seed: u64) -> Result<AmTrace> {
    p.check_admissible()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta: Vec<Vec<f64>> = Vec::with_capacity(p.k);
    for d in 0..p.k {
        let dir = normal_vec(&mut rng, p.dims[d]);
        let n = norm(&dir).max(f64::MIN_POSITIVE);
        let u: f64 = rng.random();
        let r = 0.5 * p.radii[d] * u.powf(1.0 / p.dims[d] as f64);
        theta.push(p.theta_star[d].iter().zip(&dir).map(|(s, x)| s + r * x / n).collect());
    }
    let start = theta.clone();
    let errors = |theta: &[Vec<f64>]| -> Vec<f64> {
        p.deltas(theta).iter().map(|d| d.iter().map(|x| x * x).sum()).collect()
    };
    let mut trace = AmTrace {
        block_errors: vec![errors(&theta)],
        steps: Vec::with_capacity(iterations),
        total: Vec::with_capacity(iterations + 1),
        max_drift: vec![0.0; p.k],
    };
    for t in 0..iterations {
        let eta = p.step_size(t);
        for d in 0..p.k {
            let mut g = p.grad(&theta, d);
            if p.noise_sigma > 0.0 {
                for gi in g.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *gi += p.noise_sigma * z;
                }
            }
            for (x, gi) in theta[d].iter_mut().zip(&g) {
                *x -= eta * gi;
            }
            project(&mut theta[d], &start[d], 0.5 * p.radii[d]);
            let drift = norm(&theta[d].iter().zip(&start[d]).map(|(a, b)| a - b).collect::<Vec<_>>());
            trace.max_drift[d] = trace.max_drift[d].max(drift);
        }
        trace.steps.push(eta);
        trace.block_errors.push(errors(&theta));
    }
    trace.total = trace.block_errors.iter().map(|e| e.iter().sum()).collect();
    Ok(trace)
}

/// Independent runs in parallel; trace `i` uses seed `seed + i`.
pub fn run_ensemble(p: &TheoryProblem, iterations: usize, traces: usize, seed: u64) -> Result<Vec<AmTrace>> {
    (0..traces)
        .into_par_iter()
        .map(|i| stochastic_am_run(p, iterations, seed.wrapping_add(i as u64)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    /// The bound concerns `E[Σ_d‖Δ_d^{t+1}‖²]`.
    pub t: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub violations: Vec<usize>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn from_rows(rows: Vec<BoundRow>) -> Self {
        let violations = rows.iter().filter(|r| !r.pass).map(|r| r.t).collect();
        Self { rows, violations }
    }
}

fn check_ensemble(traces: &[AmTrace], noisy: bool) -> Result<usize> {
    if traces.is_empty() || (noisy && traces.len() < MIN_TRACES) {
        return Err(Error::InvalidConfig(format!(
            "need at least {MIN_TRACES} traces, got {}",
            traces.len()
        )));
    }
    let len = traces[0].total.len();
    if len < 2 || traces.iter().any(|t| t.total.len() != len) {
        return Err(Error::InvalidConfig("traces must share a positive length".into()));
    }
    Ok(len - 1)
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Per-trace margins `E_i^{t+1} − lhs_scale·E_i^{ref}` must average below
/// `offset` up to the Monte-Carlo tolerance.
fn bound_rows(
    traces: &[AmTrace],
    iters: usize,
    rhs: impl Fn(usize) -> (usize, f64, f64),
) -> BoundReport {
    let rows = (0..iters)
        .map(|t| {
            let (reference, scale, offset) = rhs(t);
            let margin = traces.iter().map(move |tr| tr.total[t + 1] - scale * tr.total[reference]);
            let (m, se) = mean_and_se(margin);
            let (mean_error, _) = mean_and_se(traces.iter().map(move |tr| tr.total[t + 1]));
            let (mean_ref, _) = mean_and_se(traces.iter().map(move |tr| tr.total[reference]));
            let bound = scale * mean_ref + offset;
            BoundRow {
                t,
                mean_error,
                std_error: se,
                rhs: bound,
                pass: m <= offset + MC_STD_ERRORS * se + 1e-12 * bound.abs(),
            }
        })
        .collect();
    BoundReport::from_rows(rows)
}

/// `E[Σ‖Δ^{t+1}‖²] ≤ (1 − q^t) E[Σ‖Δ^t‖²] + β^t σ²` at every `t`.
pub fn check_recursion(traces: &[AmTrace], p: &TheoryProblem) -> Result<BoundReport> {
    let iters = check_ensemble(traces, p.noise_sigma > 0.0)?;
    let sigma2 = p.sigma_squared()?;
    Ok(bound_rows(traces, iters, |t| {
        let eta = p.step_size(t);
        (t, 1.0 - p.q(eta), p.beta(eta) * sigma2)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinalRateReport {
    pub bound: BoundReport,
    /// Least-squares slope of `ln E[Σ‖Δ^{t+1}‖²]` against `ln(t+3)` over the
    /// last decade of iterations.
    pub slope: f64,
}

pub const SLOPE_RANGE: (f64, f64) = (-1.3, -0.7);

impl FinalRateReport {
    pub fn slope_ok(&self) -> bool {
        (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&self.slope)
    }

    pub fn passed(&self) -> bool {
        self.bound.passed() && self.slope_ok()
    }
}

/// `E[Σ‖Δ^{t+1}‖²] ≤ E[Σ‖Δ^0‖²](2/(t+3))^{3/2} + 9σ²/(A²(t+3))` at every
/// `t`, plus the terminal log-log slope.
pub fn check_final_rate(traces: &[AmTrace], p: &TheoryProblem) -> Result<FinalRateReport> {
    let iters = check_ensemble(traces, p.noise_sigma > 0.0)?;
    let sigma2 = p.sigma_squared()?;
    let a = p.rate_constant();
    let bound = bound_rows(traces, iters, |t| {
        let s = t as f64 + 3.0;
        (0, (2.0 / s).powf(1.5), 9.0 * sigma2 / (a * a * s))
    });
    let slope = loglog_slope(&bound.rows, iters / 10);
    Ok(FinalRateReport { bound, slope })
}

fn loglog_slope(rows: &[BoundRow], from: usize) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.t >= from && r.mean_error > 0.0)
        .map(|r| ((r.t as f64 + 3.0).ln(), r.mean_error.ln()))
        .collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Noiseless decay: the mean error relative to the mean initial error stays
/// below `(2/(t+3))^{3/2}`.
pub fn check_noiseless_decay(traces: &[AmTrace]) -> Result<BoundReport> {
    let iters = check_ensemble(traces, false)?;
    Ok(bound_rows(traces, iters, |t| (0, (2.0 / (t as f64 + 3.0)).powf(1.5), 0.0)))
}

/// One report line per iteration, as written by the CLI.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryRow {
    pub t: usize,
    pub mean_error: f64,
    pub bound_rhs: f64,
    pub recursion_rhs: f64,
    pub pass: bool,
}

pub fn theory_rows(recursion: &BoundReport, final_rate: &FinalRateReport) -> Vec<TheoryRow> {
    recursion
        .rows
        .iter()
        .zip(&final_rate.bound.rows)
        .map(|(r, f)| TheoryRow {
            t: r.t,
            mean_error: r.mean_error,
            bound_rhs: f.rhs,
            recursion_rhs: r.rhs,
            pass: r.pass && f.pass,
        })
        .collect()
}
