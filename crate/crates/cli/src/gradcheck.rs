//! The `gradcheck` command: every analytic gradient against central finite
//! differences, plus the exact oracles for the closed-form and combinatorial
//! solvers and the IDX fuzz check.

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use altmin::altmin::{
    bcd_sweeps, binary_code_descent, binary_code_update, binary_objective, hidden_weight_gradient,
    hidden_weight_objective, layer_code_gradient, layer_objective, output_weight_gradient, update_codes, AmConfig,
    BinaryNext, MuSchedule,
};
use altmin::baselines::{backprop_grads, mean_loss};
use altmin::datasets::{decode_idx_images, decode_idx_labels, encode_idx_images, encode_idx_labels, IdxImages};
use altmin::model::NetworkSpec;
use altmin::numerics::{
    cross_entropy_rows, lambda_max, lipschitz_bound, multinomial_grads, multinomial_loss, symmetric_eigenvalues,
    ReferenceClassObjective,
};
use altmin::rnn::{
    bptt_grads, rnn_block_gradients, rnn_block_objectives, rnn_encode, rnn_loss, rnn_step_gradient,
    rnn_step_objective, rnn_z_gradient,
};
use altmin::{ActivationKind, ElmanState, Matrix, NetworkState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, Context, Result};

pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Norm-wise relative error allowed between analytic and numerical
/// gradients.
pub const GRAD_TOL: f64 = 1e-5;
/// Distance allowed between an iterative solver and its exact solution.
pub const ORACLE_TOL: f64 = 1e-6;
/// Allowed optimality gap of the width-8 binary search.
pub const BINARY_GAP: f64 = 0.05;
/// Relative slack on the Hessian spectral bound, for finite-difference noise.
pub const HESSIAN_SLACK: f64 = 1e-6;
pub const FUZZ_CASES: usize = 100;

const FD_STEP: f64 = 1e-5;

pub const FAMILIES: &[&str] = &[
    "multinomial",
    "activation-derivative",
    "mlp-backprop",
    "am-code",
    "am-weights",
    "rnn-bptt",
    "rnn-blocks",
    "bcd-oracle",
    "quadratic-codes",
    "binary-codes",
    "lipschitz",
    "idx-format",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    pub seed: u64,
    pub instances: usize,
    /// Family whose analytic side is deliberately corrupted.
    pub fault: Option<String>,
}

impl GradcheckSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let s = GradcheckSettings {
            seed: cfg.or("seed", 0)?,
            instances: cfg.or("instances", 10)?,
            fault: cfg.str("fault")?.map(str::to_string),
        };
        if s.instances == 0 {
            return Err(CliError::config("instances must be positive"));
        }
        if let Some(f) = &s.fault {
            if f != "activation-derivative" {
                return Err(CliError::config(format!(
                    "fault = {f}: the only injectable fault is activation-derivative"
                )));
            }
        }
        Ok(s)
    }

    pub fn to_config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        c.set_one("seed", self.seed).expect("known key");
        c.set_one("instances", self.instances).expect("known key");
        if let Some(f) = &self.fault {
            c.set_one("fault", f).expect("known key");
        }
        c
    }
}

/// One named check: the worst value over its instances against a limit.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub family: &'static str,
    pub check: String,
    pub instances: usize,
    pub worst: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn families(&self) -> Vec<&'static str> {
        let mut f: Vec<&'static str> = self.results.iter().map(|r| r.family).collect();
        f.dedup();
        f
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }

    pub fn family_passed(&self, family: &str) -> bool {
        self.results.iter().filter(|r| r.family == family).all(|r| r.passed)
    }

    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut out = String::new();
        writeln!(out, "{}", cfg.comment_line()).unwrap();
        writeln!(out, "family,check,instances,worst,limit,pass").unwrap();
        for r in &self.results {
            writeln!(
                out,
                "{},{},{},{:?},{:?},{}",
                r.family, r.check, r.instances, r.worst, r.limit, r.passed
            )
            .unwrap();
        }
        out
    }
}

struct Recorder<'a> {
    report: &'a mut GradcheckReport,
    family: &'static str,
}

impl Recorder<'_> {
    /// Records the worst of `values`; passes when every value is at most
    /// `limit` (NaN fails).
    fn record(&mut self, check: &str, values: &[f64], limit: f64) {
        let worst = values.iter().copied().fold(0.0_f64, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
        self.report.results.push(CheckResult {
            family: self.family,
            check: check.to_string(),
            instances: values.len(),
            worst,
            limit,
            passed: worst <= limit,
        });
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` around a point with `n` coordinates;
/// `f(i, h)` evaluates the function with coordinate `i` shifted by `h`.
fn central_diff(n: usize, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    (0..n).map(|i| (f(i, FD_STEP) - f(i, -FD_STEP)) / (2.0 * FD_STEP)).collect()
}

fn shifted(m: &Matrix<f64>, i: usize, h: f64) -> Matrix<f64> {
    let mut out = m.clone();
    out.as_mut_slice()[i] += h;
    out
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn rand_targets(rng: &mut ChaCha8Rng, rows: usize, m: usize) -> Matrix<f64> {
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..m)).collect();
    Matrix::from_fn(rows, m, |i, j| if labels[i] == j { 1.0 } else { 0.0 })
}

/// Dense solve of `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Matrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.push(b[i]);
            r
        })
        .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..=n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (m[k][n] - s) / m[k][k];
    }
    x
}

fn instance_rng(seed: u64, family: usize, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add((family * 10_000 + i) as u64))
}

fn random_net(rng: &mut ChaCha8Rng, acts: &[ActivationKind]) -> NetworkState {
    let mut sizes = vec![rng.random_range(2..6)];
    sizes.extend(acts.iter().map(|_| rng.random_range(2..6)));
    sizes.push(rng.random_range(2..5));
    let spec = NetworkSpec::new(sizes, acts.to_vec(), rng.random()).expect("valid sizes");
    let mut net = NetworkState::init(spec).expect("valid spec");
    for w in net.weights_mut() {
        *w = rand_matrix(rng, w.rows(), w.cols(), 1.0);
    }
    net
}

const SMOOTH: [ActivationKind; 3] = [ActivationKind::Tanh, ActivationKind::ReLU, ActivationKind::Identity];

fn smooth_acts(i: usize, layers: usize) -> Vec<ActivationKind> {
    (0..layers).map(|l| SMOOTH[(i + l) % SMOOTH.len()]).collect()
}

fn check_multinomial(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let (mut ex, mut ew, mut eref) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 0, i);
        let (n, m) = (rng.random_range(2..7), rng.random_range(2..6));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = rand_matrix(&mut rng, n, m, 1.0);
        let y = rand_targets(&mut rng, 1, m).row(0).to_vec();
        let (gx, gw) = multinomial_grads(&y, &x, &w).context(|| "multinomial".into())?;
        let fx = central_diff(n, |k, h| {
            let mut xs = x.clone();
            xs[k] += h;
            multinomial_loss(&y, &xs, &w).unwrap()
        });
        let fw = central_diff(n * m, |k, h| multinomial_loss(&y, &x, &shifted(&w, k, h)).unwrap());
        ex.push(relative_error(&gx[..], &fx));
        ew.push(relative_error(gw.as_slice(), &fw));

        let p = rng.random_range(2..6);
        let obj = ReferenceClassObjective {
            dictionary: rand_matrix(&mut rng, p, n, 1.0),
            x: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
            w: rand_matrix(&mut rng, n, m - 1, 1.0),
            y: {
                let k = rng.random_range(0..m);
                (0..m - 1).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
            },
        };
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = obj.gradient(&c).context(|| "reference-class gradient".into())?;
        let fd = central_diff(n, |k, h| {
            let mut cs = c.clone();
            cs[k] += h;
            obj.value(&cs).unwrap()
        });
        eref.push(relative_error(&g[..], &fd));
    }
    rec.record("loss-wrt-input", &ex, GRAD_TOL);
    rec.record("loss-wrt-weights", &ew, GRAD_TOL);
    rec.record("reference-class-code", &eref, GRAD_TOL);
    Ok(())
}

fn check_activations(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let corrupt = s.fault.as_deref() == Some("activation-derivative");
    for kind in SMOOTH {
        let mut errs = Vec::new();
        for i in 0..s.instances {
            let mut rng = instance_rng(s.seed, 1, i);
            // stay clear of the ReLU kink
            let pts: Vec<f64> = (0..8)
                .map(|_| {
                    let v: f64 = rng.random_range(0.01..3.0);
                    if rng.random::<bool>() {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let mut an = Vec::new();
            for &p in &pts {
                let d = kind.derivative(p).context(|| "activation derivative".into())?;
                an.push(if corrupt { d * 1.01 + 1e-3 } else { d });
            }
            let fd: Vec<f64> = pts
                .iter()
                .map(|&p| (kind.apply(p + FD_STEP) - kind.apply(p - FD_STEP)) / (2.0 * FD_STEP))
                .collect();
            errs.push(relative_error(&an, &fd));
        }
        rec.record(kind.name(), &errs, GRAD_TOL);
    }
    Ok(())
}

fn check_backprop(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 2, i);
        let net = random_net(&mut rng, &smooth_acts(i, 3));
        let b = rng.random_range(2..6);
        let x = rand_matrix(&mut rng, b, net.spec().input_dim(), 1.0);
        let y = rand_targets(&mut rng, b, net.spec().num_classes());
        let grads = backprop_grads(&net, &x, &y).context(|| "backprop".into())?;
        for (l, g) in grads.iter().enumerate() {
            let fd = central_diff(g.as_slice().len(), |k, h| {
                let mut p = net.clone();
                p.weights_mut()[l].as_mut_slice()[k] += h;
                mean_loss(&p, &x, &y).unwrap()
            });
            per_layer[l].push(relative_error(g.as_slice(), &fd));
        }
    }
    for (l, errs) in per_layer.iter().enumerate() {
        rec.record(&format!("layer-{}", l + 1), errs, GRAD_TOL);
    }
    Ok(())
}

fn check_am_codes(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut hidden = Vec::new();
    let mut last = Vec::new();
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 3, i);
        let net = random_net(&mut rng, &smooth_acts(i, 2));
        let b = rng.random_range(2..5);
        let x = rand_matrix(&mut rng, b, net.spec().input_dim(), 1.0);
        let y = rand_targets(&mut rng, b, net.spec().num_classes());
        let mut codes = net.encode_input(&x).context(|| "encode".into())?;
        for c in codes.codes.iter_mut() {
            *c = rand_matrix(&mut rng, c.rows(), c.cols(), 1.0);
        }
        let mu = rng.random_range(0.1..2.0);
        for l in 1..=2 {
            let pred = net.layer_input(&x, &codes, l - 1).matmul_t(net.weight(l)).unwrap();
            let upper = if l == 2 { &y } else { &codes.codes[l] };
            let g = layer_code_gradient(&net, &codes.codes[l - 1], &pred, upper, l, mu).context(|| "code gradient".into())?;
            let fd = central_diff(g.as_slice().len(), |k, h| {
                let mut cb = codes.clone();
                cb.codes[l - 1].as_mut_slice()[k] += h;
                layer_objective(&net, &cb, &x, &y, l, mu).unwrap()
            });
            let e = relative_error(g.as_slice(), &fd);
            if l == 2 {
                last.push(e)
            } else {
                hidden.push(e)
            }
        }
    }
    rec.record("hidden-layer-code", &hidden, GRAD_TOL);
    rec.record("last-hidden-code", &last, GRAD_TOL);
    Ok(())
}

fn check_am_weights(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let (mut hidden, mut output) = (Vec::new(), Vec::new());
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 4, i);
        let (b, n, m) = (rng.random_range(2..8), rng.random_range(2..6), rng.random_range(2..6));
        let w = rand_matrix(&mut rng, m, n, 1.0);
        let a = rand_matrix(&mut rng, b, n, 1.0);
        let c = rand_matrix(&mut rng, b, m, 1.0);
        let mu = rng.random_range(0.1..2.0);
        let g = hidden_weight_gradient(&w, &a, &c, mu).context(|| "weight gradient".into())?;
        let fd = central_diff(m * n, |k, h| hidden_weight_objective(&shifted(&w, k, h), &a, &c, mu).unwrap());
        hidden.push(relative_error(g.as_slice(), &fd));

        let y = rand_targets(&mut rng, b, m);
        let g = output_weight_gradient(&w, &a, &y).context(|| "output gradient".into())?;
        let fd = central_diff(m * n, |k, h| {
            cross_entropy_rows(&a.matmul_t(&shifted(&w, k, h)).unwrap(), &y).unwrap().mean_loss
        });
        output.push(relative_error(g.as_slice(), &fd));
    }
    rec.record("hidden-weights", &hidden, GRAD_TOL);
    rec.record("output-weights", &output, GRAD_TOL);
    Ok(())
}

fn random_rnn(rng: &mut ChaCha8Rng) -> ElmanState {
    let (d, p, t, m) = (rng.random_range(2..5), rng.random_range(1..3), rng.random_range(2..6), rng.random_range(2..5));
    let mut st = ElmanState::init(d, p, t, m, rng.random()).expect("positive sizes");
    st.b = rand_matrix(rng, 1, d, 0.5);
    st
}

fn params_mut(st: &mut ElmanState) -> [&mut Matrix<f64>; 5] {
    [&mut st.u, &mut st.w, &mut st.b, &mut st.v, &mut st.c]
}

const RNN_BLOCKS: [&str; 5] = ["u", "w", "b", "v", "c"];

fn check_bptt(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); 5];
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 5, i);
        let st = random_rnn(&mut rng);
        let b = rng.random_range(2..5);
        let x = rand_matrix(&mut rng, b, st.steps() * st.input_dim(), 1.0);
        let y = rand_targets(&mut rng, b, st.classes());
        let (g, _, _) = bptt_grads(&st, &x, &y).context(|| "bptt".into())?;
        for (k, an) in g.blocks().into_iter().enumerate() {
            let fd = central_diff(an.as_slice().len(), |j, h| {
                let mut p = st.clone();
                params_mut(&mut p)[k].as_mut_slice()[j] += h;
                let enc = rnn_encode(&p, &x).unwrap();
                rnn_loss(&p, &enc.z, &y).unwrap().0
            });
            errs[k].push(relative_error(an.as_slice(), &fd));
        }
    }
    for (k, e) in errs.iter().enumerate() {
        rec.record(RNN_BLOCKS[k], e, GRAD_TOL);
    }
    Ok(())
}

fn check_rnn_blocks(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); 5];
    let (mut ez, mut ec) = (Vec::new(), Vec::new());
    let which = [0, 0, 0, 1, 2];
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 6, i);
        let st = random_rnn(&mut rng);
        let b = rng.random_range(2..5);
        let x = rand_matrix(&mut rng, b, st.steps() * st.input_dim(), 1.0);
        let y = rand_targets(&mut rng, b, st.classes());
        let mut codes = rnn_encode(&st, &x).context(|| "rnn encode".into())?;
        for c in codes.codes.iter_mut() {
            *c = c.add(&rand_matrix(&mut rng, c.rows(), c.cols(), 0.5)).unwrap();
        }
        codes.z = codes.z.add(&rand_matrix(&mut rng, b, st.steps(), 0.5)).unwrap();
        let mu = rng.random_range(0.1..2.0);

        let g = rnn_block_gradients(&st, &codes, &x, &y, mu).context(|| "rnn blocks".into())?;
        for (k, an) in g.blocks().into_iter().enumerate() {
            let fd = central_diff(an.as_slice().len(), |j, h| {
                let mut p = st.clone();
                params_mut(&mut p)[k].as_mut_slice()[j] += h;
                rnn_block_objectives(&p, &codes, &x, &y, mu).unwrap()[which[k]]
            });
            errs[k].push(relative_error(an.as_slice(), &fd));
        }

        // per-sample code gradients: the z objective sums the loss over samples
        let gz = rnn_z_gradient(&st, &codes, &y, mu).context(|| "rnn z gradient".into())?;
        let fd = central_diff(gz.as_slice().len(), |j, h| {
            let mut cb = codes.clone();
            cb.z.as_mut_slice()[j] += h;
            let objs = rnn_block_objectives(&st, &cb, &x, &y, mu).unwrap();
            (objs[1] + objs[2]) * b as f64
        });
        ez.push(relative_error(gz.as_slice(), &fd));
        let t = rng.random_range(0..st.steps());
        let gc = rnn_step_gradient(&st, &codes, &x, t, mu).context(|| "rnn step gradient".into())?;
        let fd = central_diff(gc.as_slice().len(), |j, h| {
            let mut cb = codes.clone();
            cb.codes[t].as_mut_slice()[j] += h;
            rnn_step_objective(&st, &cb, &x, t, mu).unwrap()
        });
        ec.push(relative_error(gc.as_slice(), &fd));
    }
    for (k, e) in errs.iter().enumerate() {
        rec.record(&format!("weights-{}", RNN_BLOCKS[k]), e, GRAD_TOL);
    }
    rec.record("output-codes", &ez, GRAD_TOL);
    rec.record("step-codes", &ec, GRAD_TOL);
    Ok(())
}

fn check_bcd(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut errs = Vec::new();
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 7, i);
        let g = rand_matrix(&mut rng, 10, 5, 1.0);
        let mut a = g.t_matmul(&g).unwrap();
        a.scale_mut(0.1);
        a = a.add(&Matrix::identity(5)).unwrap();
        let b = rand_matrix(&mut rng, 5, 5, 1.0);
        let mut w = rand_matrix(&mut rng, 5, 5, 1.0);
        for _ in 0..10_000 {
            let before = w.clone();
            bcd_sweeps(&mut w, &a, &b, 1).context(|| "bcd".into())?;
            if w.max_abs_diff(&before).unwrap() < 1e-15 {
                break;
            }
        }
        // W* = B A⁻¹, one row at a time from A w_r = b_r (A symmetric)
        let exact = Matrix::from_rows(&(0..5).map(|r| gauss_solve(&a, b.row(r))).collect::<Vec<_>>()).unwrap();
        errs.push(w.sub(&exact).unwrap().frobenius_norm());
    }
    rec.record("memory-solution", &errs, ORACLE_TOL);
    Ok(())
}

fn code_cfg(iters: usize, lr: f64) -> AmConfig {
    AmConfig {
        code_lr: lr,
        code_iters: iters,
        mu: MuSchedule::constant(1.0),
        ..AmConfig::default()
    }
}

fn check_quadratic_codes(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    use ActivationKind::Identity;
    let mut errs = Vec::new();
    for i in 0..s.instances {
        let mut rng = instance_rng(s.seed, 8, i);
        let (p, n1, n2, m) = (rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6), 2);
        let spec = NetworkSpec::new(vec![p, n1, n2, m], vec![Identity, Identity], rng.random()).unwrap();
        let net = NetworkState::init(spec).context(|| "network".into())?;
        let b = rng.random_range(1..4);
        let x = rand_matrix(&mut rng, b, p, 1.0);
        let y = rand_targets(&mut rng, b, m);
        let mut codes = net.encode_input(&x).context(|| "encode".into())?;
        codes.codes[0] = rand_matrix(&mut rng, b, n1, 1.0);
        codes.codes[1] = rand_matrix(&mut rng, b, n2, 1.0);
        let mu = rng.random_range(0.2..2.0);

        // layer 1: μ‖c − W¹x‖² + μ‖c² − W²c‖², Hessian 2μ(I + W²ᵀW²)
        let w2 = net.weight(2);
        let h = Matrix::identity(n1).add(&w2.t_matmul(w2).unwrap()).unwrap();
        let lr = 1.0 / (2.0 * mu * lambda_max(&h).context(|| "lambda max".into())?);
        let out = update_codes(&net, &codes, &x, &y, &code_cfg(3000, lr), mu).context(|| "code update".into())?;
        let mut worst: f64 = 0.0;
        for r in 0..b {
            let rhs: Vec<f64> = w2
                .t_matvec(out.codes[1].row(r))
                .unwrap()
                .iter()
                .zip(net.weight(1).matvec(x.row(r)).unwrap().iter())
                .map(|(a, b)| a + b)
                .collect();
            let exact = gauss_solve(&h, &rhs);
            let d: f64 = out.codes[0].row(r).iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum();
            worst = worst.max(d.sqrt());
        }
        errs.push(worst);
    }
    rec.record("identity-layer-closed-form", &errs, ORACLE_TOL);
    Ok(())
}

fn sign_of(v: f64) -> f64 {
    ActivationKind::Sign.apply(v)
}

fn enumerate_binary(target: &[f64], next: BinaryNext<'_, f64>, mu: f64) -> f64 {
    let n = target.len();
    (0..1u32 << n)
        .map(|bits| {
            let s: Vec<f64> = (0..n).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            binary_objective(&s, target, next, mu).unwrap()
        })
        .fold(f64::INFINITY, f64::min)
}

fn check_binary(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let (mut gap1, mut gap8) = (Vec::new(), Vec::new());
    for i in 0..s.instances * 2 {
        let mut rng = instance_rng(s.seed, 9, i);
        let mu = rng.random_range(0.1..3.0);
        let y = rand_targets(&mut rng, 1, 3);
        for width in [1usize, 8] {
            let target: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = rand_matrix(&mut rng, if width == 1 { 3 } else { 6 }, width, 1.0);
            let upper: Vec<f64> = (0..w.rows()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let next = if i % 2 == 0 || width == 8 {
                BinaryNext::Quadratic {
                    next_code: &upper,
                    weight: &w,
                }
            } else {
                BinaryNext::Loss {
                    target: y.row(0),
                    weight: &w,
                }
            };
            let mut c = target.clone();
            if width == 1 {
                binary_code_update(&mut c, &target, next, mu).context(|| "binary update".into())?;
            } else {
                binary_code_descent(&mut c, &target, next, mu, 100).context(|| "binary descent".into())?;
            }
            let s: Vec<f64> = c.iter().map(|&v| sign_of(v)).collect();
            let got = binary_objective(&s, &target, next, mu).unwrap();
            let opt = enumerate_binary(&target, next, mu);
            if width == 1 {
                gap1.push((got - opt).abs());
            } else {
                gap8.push(if opt > 0.0 { got / opt - 1.0 } else { got - opt });
            }
        }
    }
    rec.record("width-1-exact", &gap1, 0.0);
    rec.record("width-8-gap", &gap8, BINARY_GAP);
    Ok(())
}

fn check_lipschitz(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut ratios = Vec::new();
    for i in 0..s.instances * 5 {
        let mut rng = instance_rng(s.seed, 10, i);
        let (n, p, k) = (rng.random_range(2..7), rng.random_range(2..7), rng.random_range(2..6));
        let scale = rng.random_range(0.2..3.0);
        let label = rng.random_range(0..k);
        let obj = ReferenceClassObjective {
            dictionary: rand_matrix(&mut rng, p, n, 1.0),
            x: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
            w: rand_matrix(&mut rng, n, k - 1, scale),
            y: (0..k - 1).map(|j| if j == label { 1.0 } else { 0.0 }).collect(),
        };
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut hess = Matrix::zeros(n, n);
        for j in 0..n {
            let at = |h: f64| {
                let mut cs = c.clone();
                cs[j] += h;
                obj.gradient(&cs).unwrap()
            };
            let (gp, gm) = (at(FD_STEP), at(-FD_STEP));
            for r in 0..n {
                hess[(r, j)] = (gp[r] - gm[r]) / (2.0 * FD_STEP);
            }
        }
        let sym = hess.add(&hess.transpose()).unwrap().scale(0.5);
        let eig = symmetric_eigenvalues(&sym).context(|| "hessian spectrum".into())?;
        let spectral = eig.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
        let bound = lipschitz_bound(&obj.dictionary, &obj.w).context(|| "lipschitz bound".into())?;
        ratios.push(spectral / bound);
    }
    rec.record("hessian-norm-over-bound", &ratios, 1.0 + HESSIAN_SLACK);
    Ok(())
}

fn mutate(bytes: &[u8], rng: &mut ChaCha8Rng, case: usize, magic: u32) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match case % 5 {
        0 => b.truncate(rng.random_range(0..bytes.len())),
        1 => b.extend((0..rng.random_range(1..16)).map(|_| rng.random::<u8>())),
        2 => {
            let mut m: u32 = rng.random();
            if m == magic {
                m ^= 1;
            }
            b[..4].copy_from_slice(&m.to_be_bytes());
        }
        3 => {
            // a count that disagrees with the payload
            let count = u32::from_be_bytes(b[4..8].try_into().unwrap());
            let other = if rng.random::<bool>() { count + rng.random_range(1..100) } else { count - 1 };
            b[4..8].copy_from_slice(&other.to_be_bytes());
        }
        _ => {
            // dimensions whose product overflows or dwarfs the payload
            let field = if magic == altmin::datasets::IDX_IMAGES_MAGIC { 4 * rng.random_range(1..4) } else { 4 };
            b[field..field + 4].copy_from_slice(&rng.random_range(0x1000_0000u32..=u32::MAX).to_be_bytes());
        }
    }
    b
}

fn check_idx(rec: &mut Recorder<'_>, s: &GradcheckSettings) -> Result<()> {
    let mut rng = instance_rng(s.seed, 11, 0);
    let mut roundtrip = Vec::new();
    for _ in 0..s.instances {
        let (count, rows, cols) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..9));
        let images = IdxImages {
            count,
            rows,
            cols,
            pixels: (0..count * rows * cols).map(|_| rng.random()).collect(),
        };
        let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
        let eb = encode_idx_images(&images);
        let el = encode_idx_labels(&labels);
        let ok = decode_idx_images(&eb).ok() == Some(images.clone())
            && decode_idx_labels(&el).ok().as_deref() == Some(&labels[..])
            && decode_idx_images(&eb).map(|i| encode_idx_images(&i)).ok() == Some(eb.clone());
        roundtrip.push(if ok { 0.0 } else { 1.0 });
    }
    rec.record("roundtrip-mismatches", &roundtrip, 0.0);

    let images = IdxImages {
        count: 3,
        rows: 4,
        cols: 5,
        pixels: (0..60).map(|i| i as u8).collect(),
    };
    let good_images = encode_idx_images(&images);
    let good_labels = encode_idx_labels(&[1, 2, 3]);
    let mut bad = Vec::new();
    for case in 0..FUZZ_CASES {
        let accepted = if case % 2 == 0 {
            let b = mutate(&good_images, &mut rng, case / 2, altmin::datasets::IDX_IMAGES_MAGIC);
            catch_unwind(AssertUnwindSafe(|| decode_idx_images(&b).is_ok()))
        } else {
            let b = mutate(&good_labels, &mut rng, case / 2, altmin::datasets::IDX_LABELS_MAGIC);
            catch_unwind(AssertUnwindSafe(|| decode_idx_labels(&b).is_ok()))
        };
        // a panic or an accepted malformed buffer both count as failures
        bad.push(if matches!(accepted, Ok(false)) { 0.0 } else { 1.0 });
    }
    rec.record("malformed-accepted-or-panicked", &bad, 0.0);
    Ok(())
}

type Family = fn(&mut Recorder<'_>, &GradcheckSettings) -> Result<()>;

const RUNNERS: [Family; 12] = [
    check_multinomial,
    check_activations,
    check_backprop,
    check_am_codes,
    check_am_weights,
    check_bptt,
    check_rnn_blocks,
    check_bcd,
    check_quadratic_codes,
    check_binary,
    check_lipschitz,
    check_idx,
];

/// Runs the named families (all when `only` is empty).
pub fn run_families(s: &GradcheckSettings, only: &[&str]) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for (family, run) in FAMILIES.iter().zip(RUNNERS) {
        if !only.is_empty() && !only.contains(family) {
            continue;
        }
        run(&mut Recorder { report: &mut report, family }, s)?;
    }
    Ok(report)
}

pub fn run_gradcheck(s: &GradcheckSettings) -> Result<GradcheckReport> {
    run_families(s, &[])
}

/// Writes `gradcheck.csv`; any failed check is reported as
/// [`CliError::Check`] naming the failures.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckReport> {
    let s = GradcheckSettings::from_config(cfg)?;
    let report = run_gradcheck(&s)?;
    fs::create_dir_all(out).context(|| out.display().to_string())?;
    let path = out.join(GRADCHECK_FILE);
    fs::write(&path, report.to_csv(&s.to_config())).context(|| path.display().to_string())?;
    let failed = report.failures();
    if !failed.is_empty() {
        let names: Vec<String> = failed.iter().map(|r| format!("{}/{}", r.family, r.check)).collect();
        return Err(CliError::Check(format!("gradcheck failed: {}", names.join(", "))));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_solve_matches_known_system() {
        let a = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]]).unwrap();
        let x = gauss_solve(&a, &[3.0, 5.0, 5.0]);
        for (got, want) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        // needs a row swap
        let p = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(gauss_solve(&p, &[2.0, 3.0]), vec![3.0, 2.0]);
    }

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
    }

    #[test]
    fn fault_hook_fails_only_its_family() {
        let s = GradcheckSettings {
            seed: 1,
            instances: 2,
            fault: Some("activation-derivative".into()),
        };
        let r = run_families(&s, &["activation-derivative", "multinomial"]).unwrap();
        assert!(!r.family_passed("activation-derivative"));
        assert!(r.family_passed("multinomial"));
        let cfg = RunConfig::parse("fault = everything").unwrap();
        assert!(GradcheckSettings::from_config(&cfg).is_err());
    }

    #[test]
    fn recorder_treats_nan_as_failure() {
        let mut report = GradcheckReport::default();
        let mut rec = Recorder {
            report: &mut report,
            family: "multinomial",
        };
        rec.record("nan", &[0.0, f64::NAN, 0.0], 1.0);
        assert!(!report.passed());
    }
}
