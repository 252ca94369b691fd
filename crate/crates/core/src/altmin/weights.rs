//! Weight phase: every layer solves its own problem given the codes.

use rayon::prelude::*;

use crate::model::{CodeBatch, NetworkState};
use crate::numerics::{activate_matrix, cross_entropy_rows};
use crate::optim::Adam;
use crate::{Error, Matrix, Result, Scalar};

/// Columns of `A` with a diagonal entry below this are left untouched.
pub const DEAD_UNIT_GUARD: f64 = 1e-12;

/// Gradient of `(μ/B) Σ_i ‖c_i − W a_i‖²`: `(2μ/B)(A Wᵀ − C)ᵀ A`.
pub fn hidden_weight_gradient<T: Scalar>(w: &Matrix<T>, a_prev: &Matrix<T>, c: &Matrix<T>, mu: T) -> Result<Matrix<T>> {
    let resid = a_prev.matmul_t(w)?.sub(c)?;
    let mut g = resid.t_matmul(a_prev)?;
    g.scale_mut(T::of(2.0) * mu / T::of(a_prev.rows().max(1) as f64));
    Ok(g)
}

/// Layer objective whose gradient is [`hidden_weight_gradient`].
pub fn hidden_weight_objective<T: Scalar>(w: &Matrix<T>, a_prev: &Matrix<T>, c: &Matrix<T>, mu: T) -> Result<T> {
    let r = a_prev.matmul_t(w)?.sub(c)?;
    Ok(mu * r.sum_squares() / T::of(a_prev.rows().max(1) as f64))
}

/// Gradient of the mean multinomial loss with respect to `W^{L+1}` at fixed
/// inputs `a^L`: `(1/B)(P − Y)ᵀ a^L`.
pub fn output_weight_gradient<T: Scalar>(w: &Matrix<T>, a_last: &Matrix<T>, targets: &Matrix<T>) -> Result<Matrix<T>> {
    let ce = cross_entropy_rows(&a_last.matmul_t(w)?, targets)?;
    ce.grad_logits.t_matmul(a_last)
}

/// Layer inputs `a^0 … a^L` from the current codes.
fn layer_inputs<T: Scalar>(net: &NetworkState<T>, x: &Matrix<T>, codes: &CodeBatch<T>) -> Vec<Matrix<T>> {
    (0..=net.num_hidden()).map(|l| net.layer_input(x, codes, l)).collect()
}

fn check_adam<T: Scalar>(net: &NetworkState<T>, opt: &[Adam<T>]) -> Result<()> {
    if opt.len() != net.weights().len() {
        return Err(Error::InvalidConfig(format!(
            "{} optimizer states for {} weight matrices",
            opt.len(),
            net.weights().len()
        )));
    }
    Ok(())
}

/// Adam phase of AM-Adam: `iters` steps per layer with learning rate `lr`.
/// Hidden layers (and, with `include_output`, the output layer) are updated
/// concurrently; each reads only the codes.
#[allow(clippy::too_many_arguments)]
pub fn update_weights_sgd<T: Scalar>(
    net: &mut NetworkState<T>,
    codes: &CodeBatch<T>,
    x: &Matrix<T>,
    targets: &Matrix<T>,
    lr: f64,
    iters: usize,
    mu: T,
    opt: &mut [Adam<T>],
) -> Result<()> {
    check_adam(net, opt)?;
    net.check_codes(codes)?;
    let inputs = layer_inputs(net, x, codes);
    let big_l = net.num_hidden();
    let lr = T::of(lr);
    net.weights_mut()
        .par_iter_mut()
        .zip(opt.par_iter_mut())
        .enumerate()
        .try_for_each(|(i, (w, adam))| -> Result<()> {
            let l = i + 1;
            for _ in 0..iters {
                let g = if l <= big_l {
                    hidden_weight_gradient(w, &inputs[l - 1], &codes.codes[l - 1], mu)?
                } else {
                    output_weight_gradient(w, &inputs[big_l], targets)?
                };
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        stage: "weight gradient",
                        layer: l,
                    });
                }
                adam.step(w, &g, lr)?;
            }
            Ok(())
        })
}

/// Adam steps on the output layer only (the AM-mem last layer).
pub fn update_output_weights<T: Scalar>(
    net: &mut NetworkState<T>,
    codes: &CodeBatch<T>,
    targets: &Matrix<T>,
    lr: f64,
    iters: usize,
    adam: &mut Adam<T>,
) -> Result<()> {
    let big_l = net.num_hidden();
    let a = activate_matrix(net.activation(big_l), &codes.codes[big_l - 1]);
    let w = net.weights_mut().last_mut().expect("validated");
    for _ in 0..iters {
        let g = output_weight_gradient(w, &a, targets)?;
        if !g.is_finite() {
            return Err(Error::NonFinite {
                stage: "weight gradient",
                layer: big_l + 1,
            });
        }
        adam.step(w, &g, T::of(lr))?;
    }
    Ok(())
}

/// Co-activation memory of every hidden layer: `A^l = Σ a^{l−1} a^{l−1ᵀ}`
/// and `B^l = Σ c^l a^{l−1ᵀ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState<T> {
    pub a: Vec<Matrix<T>>,
    pub b: Vec<Matrix<T>>,
    pub sample_count: usize,
}

impl<T: Scalar> MemoryState<T> {
    pub fn zeros(net: &NetworkState<T>) -> Self {
        let sizes = &net.spec().layer_sizes;
        let big_l = net.num_hidden();
        Self {
            a: (1..=big_l).map(|l| Matrix::zeros(sizes[l - 1], sizes[l - 1])).collect(),
            b: (1..=big_l).map(|l| Matrix::zeros(sizes[l], sizes[l - 1])).collect(),
            sample_count: 0,
        }
    }
}

/// `m += Σ_i u_i v_iᵀ` accumulated entrywise in ascending sample order, so a
/// batch gives the same bits as feeding its samples one at a time.
fn accumulate_outer<T: Scalar>(m: &mut Matrix<T>, u: &Matrix<T>, v: &Matrix<T>) {
    let cols = m.cols();
    m.as_mut_slice().par_chunks_mut(cols).enumerate().for_each(|(j, row)| {
        for i in 0..u.rows() {
            let uij = u[(i, j)];
            if uij == T::zero() {
                continue;
            }
            for (r, &vik) in row.iter_mut().zip(v.row(i)) {
                *r += uij * vik;
            }
        }
    });
}

/// Adds the batch's co-activations to the memory (samples in ascending
/// order).
pub fn update_memory<T: Scalar>(
    mem: &mut MemoryState<T>,
    net: &NetworkState<T>,
    x: &Matrix<T>,
    codes: &CodeBatch<T>,
) -> Result<()> {
    net.check_codes(codes)?;
    if mem.a.len() != net.num_hidden() {
        return Err(Error::InvalidConfig("memory does not match the network".into()));
    }
    if !codes.is_finite() {
        return Err(Error::NonFinite { stage: "memory", layer: 0 });
    }
    let inputs = layer_inputs(net, x, codes);
    for l in 1..=net.num_hidden() {
        let a = &inputs[l - 1];
        accumulate_outer(&mut mem.a[l - 1], a, a);
        accumulate_outer(&mut mem.b[l - 1], &codes.codes[l - 1], a);
    }
    mem.sample_count += x.rows();
    Ok(())
}

/// `Tr(WᵀWA) − 2Tr(WᵀB)`.
pub fn surrogate_value<T: Scalar>(w: &Matrix<T>, a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    let wa = w.matmul(a)?;
    let quad: T = wa.as_slice().iter().zip(w.as_slice()).map(|(&x, &y)| x * y).sum();
    let lin: T = b.as_slice().iter().zip(w.as_slice()).map(|(&x, &y)| x * y).sum();
    Ok(quad - T::of(2.0) * lin)
}

/// `sweeps` block coordinate passes over the columns of `W` in ascending
/// order: `w_j ← w_j + (b_j − W a_j)/A_jj`.
pub fn bcd_sweeps<T: Scalar>(w: &mut Matrix<T>, a: &Matrix<T>, b: &Matrix<T>, sweeps: usize) -> Result<()> {
    if a.shape() != (w.cols(), w.cols()) || b.shape() != w.shape() {
        return Err(Error::ShapeMismatch {
            op: "bcd_sweeps",
            left: w.shape(),
            right: a.shape(),
        });
    }
    let guard = T::of(DEAD_UNIT_GUARD);
    let (rows, cols) = w.shape();
    let mut wa = vec![T::zero(); rows];
    for _ in 0..sweeps {
        for j in 0..cols {
            let ajj = a[(j, j)];
            if ajj < guard {
                continue;
            }
            // W a_j, using symmetry of A to read row j contiguously
            let aj = a.row(j);
            for (r, out) in wa.iter_mut().enumerate() {
                *out = crate::numerics::dot(w.row(r), aj);
            }
            for (r, &war) in wa.iter().enumerate() {
                let u = (b[(r, j)] - war) / ajj;
                w[(r, j)] += u;
            }
        }
    }
    Ok(())
}

/// Memory-based update of every hidden layer, concurrently across layers.
pub fn update_weights_mem<T: Scalar>(net: &mut NetworkState<T>, mem: &MemoryState<T>, sweeps: usize) -> Result<()> {
    if mem.sample_count == 0 {
        return Err(Error::InvalidConfig("memory is empty".into()));
    }
    let big_l = net.num_hidden();
    net.weights_mut()[..big_l]
        .par_iter_mut()
        .zip(mem.a.par_iter().zip(mem.b.par_iter()))
        .enumerate()
        .try_for_each(|(i, (w, (a, b)))| {
            bcd_sweeps(w, a, b, sweeps)?;
            if w.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite {
                    stage: "memory weight update",
                    layer: i + 1,
                })
            }
        })
}
