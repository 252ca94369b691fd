//! Backward code phase: one small problem per hidden layer, solved from the
//! top layer down.

use super::AmConfig;
use crate::model::{CodeBatch, NetworkState};
use crate::numerics::{activate_grad_matrix, activate_matrix, cross_entropy_rows, log_sum_exp, ActivationKind};
use crate::{Error, Matrix, Result, Scalar};

/// Boundary value used when a binary unit's pattern disagrees in sign with
/// its feedforward target.
pub const BINARY_EPS: f64 = 1e-3;

/// What sits above a binary layer in its local objective.
#[derive(Clone, Copy, Debug)]
pub enum BinaryNext<'a, T> {
    /// `μ‖next_code − W s‖²` for an intermediate layer (`W = W^{l+1}`).
    Quadratic { next_code: &'a [T], weight: &'a Matrix<T> },
    /// `ℒ(y, s, W)` when the binary layer is the last hidden layer
    /// (`W = W^{L+1}`, `y` one-hot).
    Loss { target: &'a [T], weight: &'a Matrix<T> },
}

impl<T: Scalar> BinaryNext<'_, T> {
    fn weight(&self) -> &Matrix<T> {
        match self {
            Self::Quadratic { weight, .. } | Self::Loss { weight, .. } => weight,
        }
    }
}

fn sign<T: Scalar>(x: T) -> T {
    ActivationKind::Sign.apply(x)
}

/// Cost of the penalty `μ(t − c)²` once `c` is chosen optimally subject to
/// `sign(c) = s`.
fn penalty_cost<T: Scalar>(t: T, s: T, mu: T) -> T {
    if sign(t) == s {
        T::zero()
    } else {
        let d = t - s * T::of(BINARY_EPS);
        mu * d * d
    }
}

/// Value of the binary layer's local objective for a sign pattern `s`.
pub fn binary_objective<T: Scalar>(s: &[T], target: &[T], next: BinaryNext<'_, T>, mu: T) -> Result<T> {
    let pen: T = s.iter().zip(target).map(|(&s, &t)| penalty_cost(t, s, mu)).sum();
    let z = next.weight().matvec(s)?;
    let upper = match next {
        BinaryNext::Quadratic { next_code, .. } => {
            mu * next_code.iter().zip(z.iter()).map(|(&c, &v)| (c - v) * (c - v)).sum::<T>()
        }
        BinaryNext::Loss { target: y, .. } => {
            let label = crate::numerics::one_hot_index(y, 0)?;
            log_sum_exp(&z) - z[label]
        }
    };
    Ok(pen + upper)
}

fn check_binary_shapes<T: Scalar>(c: &[T], target: &[T], next: &BinaryNext<'_, T>) -> Result<()> {
    let w = next.weight();
    let upper_len = match next {
        BinaryNext::Quadratic { next_code, .. } => next_code.len(),
        BinaryNext::Loss { target, .. } => target.len(),
    };
    if c.len() != target.len() || w.cols() != c.len() || w.rows() != upper_len {
        return Err(Error::ShapeMismatch {
            op: "binary_code_update",
            left: (c.len(), target.len()),
            right: w.shape(),
        });
    }
    Ok(())
}

/// Single coordinate sweep on a sign layer; returns the number of flipped
/// units. Starts from `s = sign(c)`, visits units in ascending order and
/// keeps whichever of `±1` gives the lower objective (ties keep the current
/// value). Afterwards `c_i = target_i` where its sign agrees with `s_i`, else
/// `c_i = s_i · 1e-3`.
pub fn binary_code_update<T: Scalar>(c: &mut [T], target: &[T], next: BinaryNext<'_, T>, mu: T) -> Result<usize> {
    check_binary_shapes(c, target, &next)?;
    let mut s: Vec<T> = c.iter().map(|&v| sign(v)).collect();
    let flips = sweep(&mut s, target, &next, mu)?;
    finish(c, &s, target);
    Ok(flips)
}

/// Multi-start local search. From each of a few deterministic starting
/// patterns (the current signs, the signs of `target`, the signs of the
/// upper layer's back-projection `Wᵀu`, all `+1`, all `−1`) it alternates
/// coordinate sweeps with the best improving two-unit flip until neither
/// helps (at most `max_rounds` rounds per start), and keeps the best pattern.
/// Ties between starts go to the earlier one.
pub fn binary_code_descent<T: Scalar>(
    c: &mut [T],
    target: &[T],
    next: BinaryNext<'_, T>,
    mu: T,
    max_rounds: usize,
) -> Result<()> {
    check_binary_shapes(c, target, &next)?;
    let n = c.len();
    let back = match next {
        BinaryNext::Quadratic { next_code, weight } => weight.t_matvec(next_code)?,
        BinaryNext::Loss { target: y, weight } => {
            let inv = T::one() / T::of(y.len() as f64);
            let centred: Vec<T> = y.iter().map(|&v| v - inv).collect();
            weight.t_matvec(&centred)?
        }
    };
    let starts: [Vec<T>; 5] = [
        c.iter().map(|&v| sign(v)).collect(),
        target.iter().map(|&v| sign(v)).collect(),
        back.iter().map(|&v| sign(v)).collect(),
        vec![T::one(); n],
        vec![-T::one(); n],
    ];
    let mut best: Option<(T, Vec<T>)> = None;
    for mut s in starts {
        for _ in 0..max_rounds {
            if sweep(&mut s, target, &next, mu)? > 0 {
                continue;
            }
            if !pair_flip(&mut s, target, &next, mu)? {
                break;
            }
        }
        let v = binary_objective(&s, target, next, mu)?;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, s));
        }
    }
    let (_, s) = best.expect("at least one start");
    finish(c, &s, target);
    Ok(())
}

fn pair_flip<T: Scalar>(s: &mut [T], target: &[T], next: &BinaryNext<'_, T>, mu: T) -> Result<bool> {
    let base = binary_objective(s, target, *next, mu)?;
    let mut best = (base, None);
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            s[i] = -s[i];
            s[j] = -s[j];
            let v = binary_objective(s, target, *next, mu)?;
            s[i] = -s[i];
            s[j] = -s[j];
            if v < best.0 {
                best = (v, Some((i, j)));
            }
        }
    }
    Ok(match best.1 {
        Some((i, j)) => {
            s[i] = -s[i];
            s[j] = -s[j];
            true
        }
        None => false,
    })
}

fn finish<T: Scalar>(c: &mut [T], s: &[T], target: &[T]) {
    for ((ci, &si), &ti) in c.iter_mut().zip(s).zip(target) {
        *ci = if sign(ti) == si { ti } else { si * T::of(BINARY_EPS) };
    }
}

fn sweep<T: Scalar>(s: &mut [T], target: &[T], next: &BinaryNext<'_, T>, mu: T) -> Result<usize> {
    let w = next.weight();
    let two = T::of(2.0);
    // z = W s, kept in sync with every flip
    let mut z = w.matvec(s)?.into_vec();
    let label = match next {
        BinaryNext::Loss { target: y, .. } => Some(crate::numerics::one_hot_index(y, 0)?),
        BinaryNext::Quadratic { .. } => None,
    };
    let upper = |z: &[T]| -> T {
        match (next, label) {
            (BinaryNext::Quadratic { next_code, .. }, _) => {
                mu * next_code.iter().zip(z).map(|(&c, &v)| (c - v) * (c - v)).sum::<T>()
            }
            (BinaryNext::Loss { .. }, Some(k)) => log_sum_exp(z) - z[k],
            _ => unreachable!(),
        }
    };
    let mut current = upper(&z);
    let mut flips = 0;
    let mut trial = vec![T::zero(); z.len()];
    for i in 0..s.len() {
        let si = s[i];
        for (r, tr) in trial.iter_mut().enumerate() {
            *tr = z[r] - two * si * w[(r, i)];
        }
        let flipped = upper(&trial);
        let keep = penalty_cost(target[i], si, mu) + current;
        let flip = penalty_cost(target[i], -si, mu) + flipped;
        if flip < keep {
            s[i] = -si;
            std::mem::swap(&mut z, &mut trial);
            current = flipped;
            flips += 1;
        }
    }
    Ok(flips)
}

/// Local objective of hidden layer `l` (1-based) for all samples, summed:
/// the loss (or next-layer penalty) plus `μ‖c − W^l a^{l−1}‖²`.
pub fn layer_objective<T: Scalar>(
    net: &NetworkState<T>,
    codes: &CodeBatch<T>,
    x: &Matrix<T>,
    targets: &Matrix<T>,
    l: usize,
    mu: T,
) -> Result<T> {
    let c = &codes.codes[l - 1];
    let t = net.layer_input(x, codes, l - 1).matmul_t(net.weight(l))?;
    let own = mu * c.sub(&t)?.sum_squares();
    let a = activate_matrix(net.activation(l), c);
    let upper = if l == net.num_hidden() {
        let ce = cross_entropy_rows(&a.matmul_t(net.output_weight())?, targets)?;
        ce.mean_loss * T::of(c.rows() as f64)
    } else {
        mu * codes.codes[l].sub(&a.matmul_t(net.weight(l + 1))?)?.sum_squares()
    };
    Ok(upper + own)
}

/// Gradient of the per-sample layer objective with respect to `c^l`
/// (`batch x m_l`). Not averaged over the batch: every sample's code is its
/// own variable.
pub fn layer_code_gradient<T: Scalar>(
    net: &NetworkState<T>,
    c: &Matrix<T>,
    prediction: &Matrix<T>,
    upper: &Matrix<T>,
    l: usize,
    mu: T,
) -> Result<Matrix<T>> {
    let kind = net.activation(l);
    let a = activate_matrix(kind, c);
    let da = activate_grad_matrix(kind, c)?;
    let two_mu = T::of(2.0) * mu;
    let back = if l == net.num_hidden() {
        // (P − Y) W^{L+1}, per sample
        let ce = cross_entropy_rows(&a.matmul_t(net.output_weight())?, upper)?;
        let mut g = ce.grad_logits.matmul(net.output_weight())?;
        g.scale_mut(T::of(c.rows() as f64));
        g
    } else {
        // −2μ (c^{l+1} − σ(c) W^{l+1}ᵀ) W^{l+1}
        let resid = upper.sub(&a.matmul_t(net.weight(l + 1))?)?;
        let mut g = resid.matmul(net.weight(l + 1))?;
        g.scale_mut(-two_mu);
        g
    };
    let mut g = back.hadamard(&da)?;
    g.axpy(two_mu, &c.sub(prediction)?)?;
    Ok(g)
}

/// Backward code sweep `l = L … 1`. Layer `l` sees the already updated
/// `c^{l+1}` and the not yet updated `c^{l−1}`. Differentiable layers take
/// `cfg.code_iters` gradient steps of size `cfg.code_lr`; sign layers take
/// `cfg.code_iters` coordinate sweeps per sample.
pub fn update_codes<T: Scalar>(
    net: &NetworkState<T>,
    codes: &CodeBatch<T>,
    x: &Matrix<T>,
    targets: &Matrix<T>,
    cfg: &AmConfig,
    mu: T,
) -> Result<CodeBatch<T>> {
    net.check_codes(codes)?;
    if codes.batch() != x.rows() || x.rows() != targets.rows() || targets.cols() != net.spec().num_classes() {
        return Err(Error::ShapeMismatch {
            op: "update_codes",
            left: x.shape(),
            right: targets.shape(),
        });
    }
    let mut out = codes.clone();
    if cfg.code_iters == 0 {
        return Ok(out);
    }
    let big_l = net.num_hidden();
    let lr = T::of(cfg.code_lr);
    for l in (1..=big_l).rev() {
        let prediction = net.layer_input(x, &out, l - 1).matmul_t(net.weight(l))?;
        let (lower, rest) = out.codes.split_at_mut(l);
        let c = &mut lower[l - 1];
        let upper = if l == big_l { targets } else { &rest[0] };

        if net.activation(l) == ActivationKind::Sign {
            let w_next = if l == big_l { net.output_weight() } else { net.weight(l + 1) };
            for i in 0..c.rows() {
                let next = if l == big_l {
                    BinaryNext::Loss {
                        target: upper.row(i),
                        weight: w_next,
                    }
                } else {
                    BinaryNext::Quadratic {
                        next_code: upper.row(i),
                        weight: w_next,
                    }
                };
                for _ in 0..cfg.code_iters {
                    binary_code_update(c.row_mut(i), prediction.row(i), next, mu)?;
                }
            }
        } else {
            for _ in 0..cfg.code_iters {
                let g = layer_code_gradient(net, c, &prediction, upper, l, mu)?;
                c.axpy(-lr, &g)?;
            }
        }
        if !c.is_finite() {
            return Err(Error::NonFinite { stage: "code update", layer: l });
        }
    }
    Ok(out)
}
