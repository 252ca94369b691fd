//! Elman recurrent network for sequence classification, trained either by
//! alternating minimization over per-step codes or by backpropagation
//! through time.
//!
//! `c^t = U x^t + W h^{t−1} + b`, `h^t = σ(c^t)` with `h^0 = 0`, a scalar
//! readout `z^t = V h^t`, and the class scores `C · ReLU(z)` over the whole
//! output sequence. Sequences are stored one per row, step `t` occupying
//! columns `t·p .. (t+1)·p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::altmin::{AmConfig, MuEvent};
use crate::baselines::{BaselineConfig, StepRule};
use crate::numerics::{activate_grad_matrix, activate_matrix, cross_entropy_rows, ActivationKind};
use crate::optim::Adam;
use crate::training::{BatchMetrics, Trainer};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct ElmanState<T> {
    /// `d x p` input weights.
    pub u: Matrix<T>,
    /// `d x d` recurrent weights.
    pub w: Matrix<T>,
    /// `1 x d` bias (a row, broadcast over the batch).
    pub b: Matrix<T>,
    /// `1 x d` readout.
    pub v: Matrix<T>,
    /// `m x T` classifier over the output sequence.
    pub c: Matrix<T>,
    pub activation: ActivationKind,
}

/// Per-step codes `c^1 … c^T` (each `batch x d`) and the output sequence
/// `z` (`batch x T`).
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCodeBatch<T> {
    pub codes: Vec<Matrix<T>>,
    pub z: Matrix<T>,
}

impl<T: Scalar> RnnCodeBatch<T> {
    pub fn is_finite(&self) -> bool {
        self.z.is_finite() && self.codes.iter().all(Matrix::is_finite)
    }
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..=bound)))
}

impl<T: Scalar> ElmanState<T> {
    /// Uniform `±1/√fan_in` weights, zero bias, tanh units.
    pub fn init(hidden: usize, input: usize, steps: usize, classes: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || input == 0 || steps == 0 || classes == 0 {
            return Err(Error::InvalidSpec(format!(
                "rnn sizes must be positive (d={hidden}, p={input}, T={steps}, m={classes})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            u: uniform(&mut rng, hidden, input, input),
            w: uniform(&mut rng, hidden, hidden, hidden),
            b: Matrix::zeros(1, hidden),
            v: uniform(&mut rng, 1, hidden, hidden),
            c: uniform(&mut rng, classes, steps, steps),
            activation: ActivationKind::Tanh,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn steps(&self) -> usize {
        self.c.cols()
    }

    pub fn classes(&self) -> usize {
        self.c.rows()
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.steps() * self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "rnn input",
                left: x.shape(),
                right: (self.steps(), self.input_dim()),
            });
        }
        Ok(())
    }

    /// Input block `x^t` (`batch x p`), `t` zero-based.
    pub fn step_input(&self, x: &Matrix<T>, t: usize) -> Matrix<T> {
        let p = self.input_dim();
        Matrix::from_fn(x.rows(), p, |i, j| x[(i, t * p + j)])
    }

    /// `U x^t + W h + b`.
    fn pre_activation(&self, xt: &Matrix<T>, h_prev: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        let mut c = xt.matmul_t(&self.u)?;
        if let Some(h) = h_prev {
            c = c.add(&h.matmul_t(&self.w)?)?;
        }
        add_row(&mut c, self.b.row(0));
        Ok(c)
    }

    pub fn is_finite(&self) -> bool {
        [&self.u, &self.w, &self.b, &self.v, &self.c].iter().all(|m| m.is_finite())
    }
}

fn add_row<T: Scalar>(m: &mut Matrix<T>, row: &[T]) {
    let cols = m.cols();
    for chunk in m.as_mut_slice().chunks_mut(cols) {
        for (a, &b) in chunk.iter_mut().zip(row) {
            *a += b;
        }
    }
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for row in m.row_iter() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn set_column<T: Scalar>(m: &mut Matrix<T>, t: usize, col: &Matrix<T>) {
    for i in 0..m.rows() {
        m[(i, t)] = col[(i, 0)];
    }
}

fn column<T: Scalar>(m: &Matrix<T>, t: usize) -> Matrix<T> {
    Matrix::from_fn(m.rows(), 1, |i, _| m[(i, t)])
}

fn relu<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    activate_matrix(ActivationKind::ReLU, m)
}

/// Feedforward unroll; the returned codes satisfy every recurrence exactly.
pub fn rnn_encode<T: Scalar>(st: &ElmanState<T>, x: &Matrix<T>) -> Result<RnnCodeBatch<T>> {
    st.check_input(x)?;
    let mut codes: Vec<Matrix<T>> = Vec::with_capacity(st.steps());
    let mut z = Matrix::zeros(x.rows(), st.steps());
    let mut h_prev: Option<Matrix<T>> = None;
    for t in 0..st.steps() {
        let c = st.pre_activation(&st.step_input(x, t), h_prev.as_ref())?;
        let h = activate_matrix(st.activation, &c);
        set_column(&mut z, t, &h.matmul_t(&st.v)?);
        codes.push(c);
        h_prev = Some(h);
    }
    Ok(RnnCodeBatch { codes, z })
}

/// Mean multinomial loss of `C · ReLU(z)` and the number of correct
/// predictions.
pub fn rnn_loss<T: Scalar>(st: &ElmanState<T>, z: &Matrix<T>, y: &Matrix<T>) -> Result<(T, usize)> {
    let ce = cross_entropy_rows(&relu(z).matmul_t(&st.c)?, y)?;
    Ok((ce.mean_loss, ce.correct))
}

/// Gradient of the mean loss with respect to `z`.
pub fn rnn_loss_grad_z<T: Scalar>(st: &ElmanState<T>, z: &Matrix<T>, y: &Matrix<T>) -> Result<Matrix<T>> {
    let ce = cross_entropy_rows(&relu(z).matmul_t(&st.c)?, y)?;
    ce.grad_logits
        .matmul(&st.c)?
        .hadamard(&activate_grad_matrix(ActivationKind::ReLU, z)?)
}

/// `Σ_t ‖c^t − (U x^t + W σ(c^{t−1}) + b)‖² + ‖z − V σ(c)‖²`, summed over
/// the batch.
pub fn rnn_penalty<T: Scalar>(st: &ElmanState<T>, x: &Matrix<T>, codes: &RnnCodeBatch<T>) -> Result<T> {
    let mut total = T::zero();
    for t in 0..st.steps() {
        let h_prev = (t > 0).then(|| activate_matrix(st.activation, &codes.codes[t - 1]));
        let pred = st.pre_activation(&st.step_input(x, t), h_prev.as_ref())?;
        total += codes.codes[t].sub(&pred)?.sum_squares();
        let h = activate_matrix(st.activation, &codes.codes[t]);
        total += column(&codes.z, t).sub(&h.matmul_t(&st.v)?)?.sum_squares();
    }
    Ok(total)
}

/// Per-sample gradient of `ℒ(y, ReLU(z), C) + μ‖z − Vσ(c)‖²` in `z`.
pub fn rnn_z_gradient<T: Scalar>(
    st: &ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    y: &Matrix<T>,
    mu: T,
) -> Result<Matrix<T>> {
    let mut g = rnn_loss_grad_z(st, &codes.z, y)?;
    g.scale_mut(T::of(codes.z.rows() as f64));
    for t in 0..st.steps() {
        let h = activate_matrix(st.activation, &codes.codes[t]);
        let r = column(&codes.z, t).sub(&h.matmul_t(&st.v)?)?;
        for i in 0..g.rows() {
            g[(i, t)] += T::of(2.0) * mu * r[(i, 0)];
        }
    }
    Ok(g)
}

/// Per-sample objective of step `t` (zero-based) in `c^t`; the first term is
/// absent at the last step.
pub fn rnn_step_objective<T: Scalar>(
    st: &ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    x: &Matrix<T>,
    t: usize,
    mu: T,
) -> Result<T> {
    let sig = st.activation;
    let h = activate_matrix(sig, &codes.codes[t]);
    let h_prev = (t > 0).then(|| activate_matrix(sig, &codes.codes[t - 1]));
    let pred = st.pre_activation(&st.step_input(x, t), h_prev.as_ref())?;
    let mut v = codes.codes[t].sub(&pred)?.sum_squares();
    v += column(&codes.z, t).sub(&h.matmul_t(&st.v)?)?.sum_squares();
    if t + 1 < st.steps() {
        let next = st.pre_activation(&st.step_input(x, t + 1), Some(&h))?;
        v += codes.codes[t + 1].sub(&next)?.sum_squares();
    }
    Ok(mu * v)
}

/// Gradient of [`rnn_step_objective`] in `c^t`.
pub fn rnn_step_gradient<T: Scalar>(
    st: &ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    x: &Matrix<T>,
    t: usize,
    mu: T,
) -> Result<Matrix<T>> {
    let sig = st.activation;
    let c = &codes.codes[t];
    let h = activate_matrix(sig, c);
    let two_mu = T::of(2.0) * mu;
    // gradient with respect to h = σ(c^t)
    let rz = column(&codes.z, t).sub(&h.matmul_t(&st.v)?)?;
    let mut gh = rz.matmul(&st.v)?;
    if t + 1 < st.steps() {
        let next = st.pre_activation(&st.step_input(x, t + 1), Some(&h))?;
        gh = gh.add(&codes.codes[t + 1].sub(&next)?.matmul(&st.w)?)?;
    }
    gh.scale_mut(-two_mu);
    let mut g = gh.hadamard(&activate_grad_matrix(sig, c)?)?;
    let h_prev = (t > 0).then(|| activate_matrix(sig, &codes.codes[t - 1]));
    let pred = st.pre_activation(&st.step_input(x, t), h_prev.as_ref())?;
    g.axpy(two_mu, &c.sub(&pred)?)?;
    Ok(g)
}

/// Code phase: `z` first, then `c^T … c^1`, each with `cfg.code_iters`
/// gradient steps of size `cfg.code_lr`.
pub fn rnn_update_codes<T: Scalar>(
    st: &ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    x: &Matrix<T>,
    y: &Matrix<T>,
    cfg: &AmConfig,
    mu: T,
) -> Result<RnnCodeBatch<T>> {
    st.check_input(x)?;
    let mut out = codes.clone();
    if cfg.code_iters == 0 {
        return Ok(out);
    }
    let lr = T::of(cfg.code_lr);
    for _ in 0..cfg.code_iters {
        let g = rnn_z_gradient(st, &out, y, mu)?;
        out.z.axpy(-lr, &g)?;
    }
    if !out.z.is_finite() {
        return Err(Error::NonFinite {
            stage: "rnn output codes",
            layer: st.steps(),
        });
    }
    for t in (0..st.steps()).rev() {
        for _ in 0..cfg.code_iters {
            let g = rnn_step_gradient(st, &out, x, t, mu)?;
            out.codes[t].axpy(-lr, &g)?;
        }
        if !out.codes[t].is_finite() {
            return Err(Error::NonFinite {
                stage: "rnn codes",
                layer: t + 1,
            });
        }
    }
    Ok(out)
}

/// Gradients for every parameter block, in the order `U, W, b, V, C`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnGrads<T> {
    pub u: Matrix<T>,
    pub w: Matrix<T>,
    pub b: Matrix<T>,
    pub v: Matrix<T>,
    pub c: Matrix<T>,
}

impl<T: Scalar> RnnGrads<T> {
    pub fn blocks(&self) -> [&Matrix<T>; 5] {
        [&self.u, &self.w, &self.b, &self.v, &self.c]
    }
}

/// The three AM weight objectives at fixed codes:
/// `(μ/B)Σ_t‖c^t − Ux^t − Wσ(c^{t−1}) − b‖²`, `(μ/B)Σ_t‖z^t − Vσ(c^t)‖²` and
/// the mean loss at `ReLU(z)`.
pub fn rnn_block_objectives<T: Scalar>(
    st: &ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    x: &Matrix<T>,
    y: &Matrix<T>,
    mu: T,
) -> Result<[T; 3]> {
    let scale = mu / T::of(x.rows().max(1) as f64);
    let mut rec = T::zero();
    let mut out = T::zero();
    for t in 0..st.steps() {
        let h_prev = (t > 0).then(|| activate_matrix(st.activation, &codes.codes[t - 1]));
        rec += codes.codes[t].sub(&st.pre_activation(&st.step_input(x, t), h_prev.as_ref())?)?.sum_squares();
        let h = activate_matrix(st.activation, &codes.codes[t]);
        out += column(&codes.z, t).sub(&h.matmul_t(&st.v)?)?.sum_squares();
    }
    Ok([scale * rec, scale * out, rnn_loss(st, &codes.z, y)?.0])
}

/// Gradients of [`rnn_block_objectives`]; `(U, W, b)` come from the first
/// objective, `V` from the second and `C` from the loss.
pub fn rnn_block_gradients<T: Scalar>(
    st: &ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    x: &Matrix<T>,
    y: &Matrix<T>,
    mu: T,
) -> Result<RnnGrads<T>> {
    let (d, p) = st.u.shape();
    let scale = T::of(2.0) * mu / T::of(x.rows().max(1) as f64);
    let mut g = RnnGrads {
        u: Matrix::zeros(d, p),
        w: Matrix::zeros(d, d),
        b: Matrix::zeros(1, d),
        v: Matrix::zeros(1, d),
        c: Matrix::zeros(st.classes(), st.steps()),
    };
    for t in 0..st.steps() {
        let xt = st.step_input(x, t);
        let h_prev = (t > 0).then(|| activate_matrix(st.activation, &codes.codes[t - 1]));
        let r = st.pre_activation(&xt, h_prev.as_ref())?.sub(&codes.codes[t])?;
        g.u = g.u.add(&r.t_matmul(&xt)?)?;
        if let Some(h) = &h_prev {
            g.w = g.w.add(&r.t_matmul(h)?)?;
        }
        g.b = g.b.add(&column_sums(&r))?;
        let h = activate_matrix(st.activation, &codes.codes[t]);
        let rz = h.matmul_t(&st.v)?.sub(&column(&codes.z, t))?;
        g.v = g.v.add(&rz.t_matmul(&h)?)?;
    }
    for m in [&mut g.u, &mut g.w, &mut g.b, &mut g.v] {
        m.scale_mut(scale);
    }
    let a = relu(&codes.z);
    g.c = cross_entropy_rows(&a.matmul_t(&st.c)?, y)?.grad_logits.t_matmul(&a)?;
    Ok(g)
}

/// Persistent Adam moments for the five parameter blocks.
#[derive(Clone, Debug)]
pub struct RnnAdam<T> {
    blocks: [Adam<T>; 5],
}

impl<T: Scalar> RnnAdam<T> {
    pub fn new(st: &ElmanState<T>) -> Self {
        Self {
            blocks: [
                Adam::for_param(&st.u),
                Adam::for_param(&st.w),
                Adam::for_param(&st.b),
                Adam::for_param(&st.v),
                Adam::for_param(&st.c),
            ],
        }
    }
}

fn params_mut<T>(st: &mut ElmanState<T>) -> [&mut Matrix<T>; 5] {
    [&mut st.u, &mut st.w, &mut st.b, &mut st.v, &mut st.c]
}

/// `iters` Adam steps on each weight block. Every block reads only the codes
/// and its own parameters, so the blocks do not interact.
#[allow(clippy::too_many_arguments)]
pub fn rnn_update_weights<T: Scalar>(
    st: &mut ElmanState<T>,
    codes: &RnnCodeBatch<T>,
    x: &Matrix<T>,
    y: &Matrix<T>,
    lr: f64,
    iters: usize,
    mu: T,
    opt: &mut RnnAdam<T>,
) -> Result<()> {
    for _ in 0..iters {
        let g = rnn_block_gradients(st, codes, x, y, mu)?;
        for (k, (p, (gk, adam))) in params_mut(st)
            .into_iter()
            .zip(g.blocks().into_iter().zip(opt.blocks.iter_mut()))
            .enumerate()
        {
            if !gk.is_finite() {
                return Err(Error::NonFinite {
                    stage: "rnn weight gradient",
                    layer: k,
                });
            }
            adam.step(p, gk, T::of(lr))?;
        }
    }
    Ok(())
}

/// Full backpropagation through time of the mean loss.
pub fn bptt_grads<T: Scalar>(st: &ElmanState<T>, x: &Matrix<T>, y: &Matrix<T>) -> Result<(RnnGrads<T>, T, usize)> {
    let enc = rnn_encode(st, x)?;
    let hs: Vec<Matrix<T>> = enc.codes.iter().map(|c| activate_matrix(st.activation, c)).collect();
    let a = relu(&enc.z);
    let ce = cross_entropy_rows(&a.matmul_t(&st.c)?, y)?;
    let (d, p) = st.u.shape();
    let mut g = RnnGrads {
        u: Matrix::zeros(d, p),
        w: Matrix::zeros(d, d),
        b: Matrix::zeros(1, d),
        v: Matrix::zeros(1, d),
        c: ce.grad_logits.t_matmul(&a)?,
    };
    let dz = ce
        .grad_logits
        .matmul(&st.c)?
        .hadamard(&activate_grad_matrix(ActivationKind::ReLU, &enc.z)?)?;
    let mut dc_next: Option<Matrix<T>> = None;
    for t in (0..st.steps()).rev() {
        let dzt = column(&dz, t);
        g.v = g.v.add(&dzt.t_matmul(&hs[t])?)?;
        let mut dh = dzt.matmul(&st.v)?;
        if let Some(dn) = &dc_next {
            dh = dh.add(&dn.matmul(&st.w)?)?;
        }
        let dc = dh.hadamard(&activate_grad_matrix(st.activation, &enc.codes[t])?)?;
        g.u = g.u.add(&dc.t_matmul(&st.step_input(x, t))?)?;
        if t > 0 {
            g.w = g.w.add(&dc.t_matmul(&hs[t - 1])?)?;
        }
        g.b = g.b.add(&column_sums(&dc))?;
        dc_next = Some(dc);
    }
    Ok((g, ce.mean_loss, ce.correct))
}

fn evaluate<T: Scalar>(st: &ElmanState<T>, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
    let enc = rnn_encode(st, x)?;
    let (loss, correct) = rnn_loss(st, &enc.z, y)?;
    Ok(BatchMetrics {
        loss: loss.as_f64(),
        accuracy: correct as f64 / x.rows().max(1) as f64,
    })
}

/// AM-Adam for the Elman network.
#[derive(Clone, Debug)]
pub struct RnnAmTrainer<T> {
    pub state: ElmanState<T>,
    pub cfg: AmConfig,
    opt: RnnAdam<T>,
    mu: f64,
}

impl<T: Scalar> RnnAmTrainer<T> {
    pub fn new(state: ElmanState<T>, cfg: AmConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = RnnAdam::new(&state);
        let mu = cfg.mu.initial();
        Ok(Self { state, cfg, opt, mu })
    }
}

impl<T: Scalar> Trainer<T> for RnnAmTrainer<T> {
    fn algo(&self) -> &'static str {
        "am-adam"
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn train_batch(&mut self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        let mu = T::of(self.mu);
        let enc = rnn_encode(&self.state, x)?;
        let (loss, correct) = rnn_loss(&self.state, &enc.z, y)?;
        let codes = rnn_update_codes(&self.state, &enc, x, y, &self.cfg, mu)?;
        rnn_update_weights(
            &mut self.state,
            &codes,
            x,
            y,
            self.cfg.weight_lr,
            self.cfg.weight_iters,
            mu,
            &mut self.opt,
        )?;
        self.mu = self.cfg.mu.step(self.mu, MuEvent::Batch);
        Ok(BatchMetrics {
            loss: loss.as_f64(),
            accuracy: correct as f64 / x.rows().max(1) as f64,
        })
    }

    fn end_epoch(&mut self) {
        self.mu = self.cfg.mu.step(self.mu, MuEvent::Epoch);
    }

    fn evaluate(&self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        evaluate(&self.state, x, y)
    }
}

/// BPTT with SGD or Adam.
#[derive(Clone, Debug)]
pub struct BpttTrainer<T> {
    pub state: ElmanState<T>,
    rule: StepRule<T>,
}

impl<T: Scalar> BpttTrainer<T> {
    pub fn new(state: ElmanState<T>, cfg: BaselineConfig) -> Result<Self> {
        let rule = StepRule::new(cfg, &[&state.u, &state.w, &state.b, &state.v, &state.c])?;
        Ok(Self { state, rule })
    }
}

impl<T: Scalar> Trainer<T> for BpttTrainer<T> {
    fn algo(&self) -> &'static str {
        self.rule.cfg.algo.name()
    }

    fn train_batch(&mut self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        let (g, loss, correct) = bptt_grads(&self.state, x, y)?;
        let grads = [g.u, g.w, g.b, g.v, g.c];
        self.rule.apply(&mut params_mut(&mut self.state), &grads)?;
        Ok(BatchMetrics {
            loss: loss.as_f64(),
            accuracy: correct as f64 / x.rows().max(1) as f64,
        })
    }

    fn end_epoch(&mut self) {
        self.rule.end_epoch();
    }

    fn evaluate(&self, x: &Matrix<T>, y: &Matrix<T>) -> Result<BatchMetrics> {
        evaluate(&self.state, x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altmin::MuSchedule;
    use crate::model::{NetworkSpec, NetworkState};

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn targets(rows: usize, m: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, m, |i, j| if (i * 3 + 1) % m == j { 1.0 } else { 0.0 })
    }

    fn random_state(seed: u64, d: usize, p: usize, t: usize, m: usize) -> ElmanState<f64> {
        let mut st = ElmanState::init(d, p, t, m, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        st.b = rand_matrix(&mut rng, 1, d);
        st
    }

    fn cfg(iters: usize, lr: f64) -> AmConfig {
        AmConfig {
            code_lr: lr,
            code_iters: iters,
            mu: MuSchedule::constant(1.0),
            ..AmConfig::default()
        }
    }

    #[test]
    fn zero_parameters_give_zero_codes() {
        let mut st = ElmanState::<f64>::init(3, 2, 4, 3, 1).unwrap();
        for m in params_mut(&mut st) {
            m.scale_mut(0.0);
        }
        let x = Matrix::from_fn(2, 8, |i, j| (i + j) as f64);
        let enc = rnn_encode(&st, &x).unwrap();
        assert!(enc.codes.iter().all(|c| c.as_slice().iter().all(|&v| v == 0.0)));
        assert!(enc.z.as_slice().iter().all(|&v| v == 0.0));
        let (loss, _) = rnn_loss(&st, &enc.z, &targets(2, 3)).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn encode_has_zero_penalty() {
        let st = random_state(2, 4, 2, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_matrix(&mut rng, 5, 12);
        let enc = rnn_encode(&st, &x).unwrap();
        assert!(rnn_penalty(&st, &x, &enc).unwrap() < 1e-20);
    }

    fn as_mlp(st: &ElmanState<f64>) -> NetworkState<f64> {
        let (d, p) = st.u.shape();
        let spec = NetworkSpec::new(
            vec![p + 1, d, 1, st.classes()],
            vec![ActivationKind::Tanh, ActivationKind::ReLU],
            0,
        )
        .unwrap();
        let w1 = Matrix::from_fn(d, p + 1, |i, j| if j < p { st.u[(i, j)] } else { st.b[(0, i)] });
        NetworkState::from_weights(spec, vec![w1, st.v.clone(), st.c.clone()]).unwrap()
    }

    fn with_bias(x: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(x.rows(), x.cols() + 1, |i, j| if j < x.cols() { x[(i, j)] } else { 1.0 })
    }

    #[test]
    fn single_step_matches_mlp() {
        let st = random_state(4, 5, 3, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_matrix(&mut rng, 6, 3);
        let y = targets(6, 4);
        let enc = rnn_encode(&st, &x).unwrap();
        let net = as_mlp(&st);
        let xb = with_bias(&x);
        let codes = net.encode_input(&xb).unwrap();
        assert!(enc.codes[0].max_abs_diff(&codes.codes[0]).unwrap() < 1e-12);
        assert!(enc.z.max_abs_diff(&codes.codes[1]).unwrap() < 1e-12);

        let (g, _, _) = bptt_grads(&st, &x, &y).unwrap();
        let mg = crate::baselines::backprop_grads(&net, &xb, &y).unwrap();
        let (d, p) = st.u.shape();
        let gu = Matrix::from_fn(d, p, |i, j| mg[0][(i, j)]);
        let gb = Matrix::from_fn(1, d, |_, i| mg[0][(i, p)]);
        assert!(g.u.max_abs_diff(&gu).unwrap() < 1e-12);
        assert!(g.b.max_abs_diff(&gb).unwrap() < 1e-12);
        assert!(g.v.max_abs_diff(&mg[1]).unwrap() < 1e-12);
        assert!(g.c.max_abs_diff(&mg[2]).unwrap() < 1e-12);
    }

    fn fd_check(analytic: &Matrix<f64>, mut f: impl FnMut(usize, f64) -> f64, tol: f64) {
        let h = 1e-6;
        for k in 0..analytic.as_slice().len() {
            let fd = (f(k, h) - f(k, -h)) / (2.0 * h);
            let an = analytic.as_slice()[k];
            assert!((fd - an).abs() <= tol * an.abs().max(1e-4), "entry {k}: {an} vs {fd}");
        }
    }

    #[test]
    fn bptt_gradient_check() {
        let st = random_state(6, 3, 2, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_matrix(&mut rng, 4, 10);
        let y = targets(4, 3);
        let (g, _, _) = bptt_grads(&st, &x, &y).unwrap();
        for (k, an) in g.blocks().into_iter().enumerate() {
            fd_check(
                an,
                |i, h| {
                    let mut s = st.clone();
                    params_mut(&mut s)[k].as_mut_slice()[i] += h;
                    let enc = rnn_encode(&s, &x).unwrap();
                    rnn_loss(&s, &enc.z, &y).unwrap().0
                },
                1e-5,
            );
        }
    }

    #[test]
    fn zero_input_gives_zero_u_gradient() {
        let mut st = random_state(8, 3, 2, 4, 3);
        st.b.scale_mut(0.0);
        let (g, _, _) = bptt_grads(&st, &Matrix::zeros(3, 8), &targets(3, 3)).unwrap();
        assert!(g.u.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_gradients_check_and_vanish_at_feedforward() {
        let st = random_state(9, 3, 2, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_matrix(&mut rng, 5, 8);
        let y = targets(5, 3);
        let enc = rnn_encode(&st, &x).unwrap();
        let g0 = rnn_block_gradients(&st, &enc, &x, &y, 0.7).unwrap();
        for m in [&g0.u, &g0.w, &g0.b, &g0.v] {
            assert!(m.as_slice().iter().all(|v| v.abs() < 1e-14));
        }
        assert!(g0.c.frobenius_norm() > 1e-6);

        let mut codes = enc.clone();
        for c in codes.codes.iter_mut() {
            *c = c.add(&rand_matrix(&mut rng, 5, 3)).unwrap();
        }
        codes.z = codes.z.add(&rand_matrix(&mut rng, 5, 4)).unwrap();
        let g = rnn_block_gradients(&st, &codes, &x, &y, 0.7).unwrap();
        let which = [0, 0, 0, 1, 2];
        for (k, an) in g.blocks().into_iter().enumerate() {
            fd_check(
                an,
                |i, h| {
                    let mut s = st.clone();
                    params_mut(&mut s)[k].as_mut_slice()[i] += h;
                    rnn_block_objectives(&s, &codes, &x, &y, 0.7).unwrap()[which[k]]
                },
                1e-5,
            );
        }
    }

    #[test]
    fn code_gradients_check() {
        let st = random_state(11, 3, 1, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_matrix(&mut rng, 2, 4);
        let y = targets(2, 3);
        let mut codes = rnn_encode(&st, &x).unwrap();
        codes.z = rand_matrix(&mut rng, 2, 4);
        for c in codes.codes.iter_mut() {
            *c = rand_matrix(&mut rng, 2, 3);
        }
        let gz = rnn_z_gradient(&st, &codes, &y, 0.4).unwrap();
        fd_check(
            &gz,
            |i, h| {
                let mut cb = codes.clone();
                cb.z.as_mut_slice()[i] += h;
                let loss = rnn_loss(&st, &cb.z, &y).unwrap().0 * 2.0;
                let mut pen = 0.0;
                for t in 0..4 {
                    let hh = activate_matrix(st.activation, &cb.codes[t]);
                    pen += column(&cb.z, t).sub(&hh.matmul_t(&st.v).unwrap()).unwrap().sum_squares();
                }
                loss + 0.4 * pen
            },
            1e-6,
        );
        for t in 0..4 {
            let g = rnn_step_gradient(&st, &codes, &x, t, 0.4).unwrap();
            fd_check(
                &g,
                |i, h| {
                    let mut cb = codes.clone();
                    cb.codes[t].as_mut_slice()[i] += h;
                    rnn_step_objective(&st, &cb, &x, t, 0.4).unwrap()
                },
                1e-6,
            );
        }
    }

    #[test]
    fn zero_code_iterations_leave_codes() {
        let st = random_state(13, 3, 1, 4, 3);
        let x = Matrix::from_fn(2, 4, |i, j| (i * j) as f64 * 0.1);
        let enc = rnn_encode(&st, &x).unwrap();
        assert_eq!(rnn_update_codes(&st, &enc, &x, &targets(2, 3), &cfg(0, 0.1), 1.0).unwrap(), enc);
    }

    #[test]
    fn scalar_identity_codes_reach_closed_form() {
        // d = 1, T = 2, identity units: each step is a scalar quadratic
        let mut st = random_state(14, 1, 1, 2, 2);
        st.activation = ActivationKind::Identity;
        let x = Matrix::from_rows(&[[0.3, -0.8]]).unwrap();
        let y = targets(1, 2);
        let mut codes = rnn_encode(&st, &x).unwrap();
        codes.codes[0][(0, 0)] = 0.9;
        codes.codes[1][(0, 0)] = -1.1;
        codes.z = Matrix::from_rows(&[[0.4, 0.2]]).unwrap();

        let (u, w, b, v) = (st.u[(0, 0)], st.w[(0, 0)], st.b[(0, 0)], st.v[(0, 0)]);
        let mu = 0.5;
        let lr = 1.0 / (2.0 * mu * (1.0 + w * w + v * v));
        let mut one = cfg(500, lr);
        one.code_iters = 500;
        let out = rnn_update_codes(&st, &codes, &x, &y, &one, mu).unwrap();
        // t = T: minimize (z2 − v c)² + (c − (u x2 + w c1 + b))² with old c1
        let z = &out.z;
        let c2 = (v * z[(0, 1)] + u * x[(0, 1)] + w * codes.codes[0][(0, 0)] + b) / (1.0 + v * v);
        assert!((out.codes[1][(0, 0)] - c2).abs() < 1e-6);
        // t = 1: (c2' − (u x2 + w c + b))² + (z1 − v c)² + (c − (u x1 + b))²
        let c2n = out.codes[1][(0, 0)];
        let c1 = (w * (c2n - u * x[(0, 1)] - b) + v * z[(0, 0)] + u * x[(0, 0)] + b) / (1.0 + w * w + v * v);
        assert!((out.codes[0][(0, 0)] - c1).abs() < 1e-6);
    }

    #[test]
    fn z_step_never_increases_objective() {
        let st = random_state(15, 3, 1, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = rand_matrix(&mut rng, 3, 5);
        let y = targets(3, 3);
        let mut codes = rnn_encode(&st, &x).unwrap();
        codes.z = rand_matrix(&mut rng, 3, 5);
        let mu = 0.8;
        // loss Hessian in z is bounded by ‖C‖² / 2 per sample
        let lam = crate::numerics::lambda_max(&st.c.t_matmul(&st.c).unwrap()).unwrap();
        let lr = 1.0 / (0.5 * lam + 2.0 * mu);
        let obj = |cb: &RnnCodeBatch<f64>| {
            let loss = rnn_loss(&st, &cb.z, &y).unwrap().0 * 3.0;
            let mut pen = 0.0;
            for t in 0..5 {
                let h = activate_matrix(st.activation, &cb.codes[t]);
                pen += column(&cb.z, t).sub(&h.matmul_t(&st.v).unwrap()).unwrap().sum_squares();
            }
            loss + mu * pen
        };
        let mut prev = obj(&codes);
        for _ in 0..50 {
            let g = rnn_z_gradient(&st, &codes, &y, mu).unwrap();
            codes.z.axpy(-lr, &g).unwrap();
            let now = obj(&codes);
            assert!(now <= prev + 1e-12);
            prev = now;
        }
    }

    #[test]
    fn relu_homogeneity_of_logits() {
        let st = random_state(17, 3, 1, 4, 3);
        let z = Matrix::from_rows(&[[0.5, -1.0, 2.0, 0.1]]).unwrap();
        let scales = [2.0, 0.5, 3.0, 1.5];
        let zs = Matrix::from_fn(1, 4, |_, t| z[(0, t)] * scales[t]);
        let mut st2 = st.clone();
        st2.c = Matrix::from_fn(3, 4, |k, t| st.c[(k, t)] / scales[t]);
        let a = relu(&z).matmul_t(&st.c).unwrap();
        let b = relu(&zs).matmul_t(&st2.c).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-14);
    }

    #[test]
    fn weight_blocks_are_independent() {
        let st = random_state(18, 3, 1, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = rand_matrix(&mut rng, 4, 4);
        let y = targets(4, 3);
        let mut codes = rnn_encode(&st, &x).unwrap();
        codes.z = rand_matrix(&mut rng, 4, 4);
        let mut a = st.clone();
        let mut opt = RnnAdam::new(&a);
        rnn_update_weights(&mut a, &codes, &x, &y, 0.01, 3, 0.5, &mut opt).unwrap();

        // one block at a time, reversed
        let mut b = st.clone();
        for k in (0..5).rev() {
            let mut adam = Adam::for_param(params_mut(&mut b)[k]);
            let mut s = st.clone();
            for _ in 0..3 {
                let g = rnn_block_gradients(&s, &codes, &x, &y, 0.5).unwrap();
                let gk = g.blocks()[k].clone();
                adam.step(params_mut(&mut s)[k], &gk, 0.01).unwrap();
            }
            *params_mut(&mut b)[k] = params_mut(&mut s)[k].clone();
        }
        assert_eq!(a, b);
    }
}
