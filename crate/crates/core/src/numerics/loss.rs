//! Multinomial (softmax cross-entropy) loss.
//!
//! The loss of a one-hot target `y` given features `x` and a class-weight
//! matrix `W` (one column per class) is
//! `-sum_i y_i (w_i . x) + log sum_l exp(w_l . x)`, evaluated with the
//! max-subtracted log-sum-exp.

use crate::numerics::matrix::dot;
use crate::{Error, Matrix, Result, Scalar, Vector};

/// Index of the hot entry; errors unless exactly one entry is 1 and the
/// rest are 0.
pub fn one_hot_index<T: Scalar>(y: &[T], row: usize) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(Error::NotOneHot { row });
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::NotOneHot { row });
        }
    }
    hot.ok_or(Error::NotOneHot { row })
}

pub fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = z.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vector<T> {
    let mut out = vec![T::zero(); z.len()];
    softmax_into(z, &mut out);
    Vector::from_vec(out)
}

fn softmax_into<T: Scalar>(z: &[T], out: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Row-wise softmax of a `batch x classes` logit matrix.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), out.row_mut(i));
    }
    out
}

fn logits_of<T: Scalar>(x: &[T], w: &Matrix<T>, y_len: usize) -> Result<Vec<T>> {
    if w.rows() != x.len() || w.cols() != y_len {
        return Err(Error::ShapeMismatch {
            op: "multinomial_loss",
            left: w.shape(),
            right: (x.len(), y_len),
        });
    }
    Ok(w.t_matvec(x)?.into_vec())
}

/// Loss for one sample; `w` is `features x classes`.
pub fn multinomial_loss<T: Scalar>(y: &[T], x: &[T], w: &Matrix<T>) -> Result<T> {
    let label = one_hot_index(y, 0)?;
    let z = logits_of(x, w, y.len())?;
    Ok(log_sum_exp(&z) - z[label])
}

/// `(dL/dx, dL/dW) = (W (p - y), x (p - y)ᵀ)`.
pub fn multinomial_grads<T: Scalar>(y: &[T], x: &[T], w: &Matrix<T>) -> Result<(Vector<T>, Matrix<T>)> {
    one_hot_index(y, 0)?;
    let z = logits_of(x, w, y.len())?;
    let p = softmax(&z);
    let diff: Vec<T> = p.iter().zip(y).map(|(&p, &y)| p - y).collect();
    let grad_x = w.matvec(&diff)?;
    let grad_w = Vector::from_vec(x.to_vec()).outer(&diff);
    Ok((grad_x, grad_w))
}

/// Batched loss on `batch x classes` logits.
///
/// Returns the mean loss, the per-row count of correct argmax predictions and
/// `dMean/dlogits = (P - Y) / batch`.
pub fn cross_entropy_rows<T: Scalar>(logits: &Matrix<T>, targets: &Matrix<T>) -> Result<CrossEntropy<T>> {
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_rows",
            left: logits.shape(),
            right: targets.shape(),
        });
    }
    let n = logits.rows();
    let mut grad = softmax_rows(logits);
    let mut total = T::zero();
    let mut correct = 0;
    for i in 0..n {
        let label = one_hot_index(targets.row(i), i)?;
        let z = logits.row(i);
        total += log_sum_exp(z) - z[label];
        if argmax(z) == label {
            correct += 1;
        }
        grad.row_mut(i)[label] -= T::one();
    }
    let inv = if n > 0 { T::one() / T::of(n as f64) } else { T::zero() };
    grad.scale_mut(inv);
    Ok(CrossEntropy {
        mean_loss: total * inv,
        correct,
        grad_logits: grad,
    })
}

pub struct CrossEntropy<T> {
    pub mean_loss: T,
    pub correct: usize,
    pub grad_logits: Matrix<T>,
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Code objective with a reconstruction term and a reference-class softmax:
///
/// `f(c) = ½‖Dc − x‖² − Σ_{i<k} y_i w_iᵀc + log(1 + Σ_{l<k} exp(w_lᵀc))`
///
/// where `W = [w_1 … w_{k−1}]` and class `k` is the reference class (its
/// indicator is implicit: `y` is all zero for it).
#[derive(Clone, Debug)]
pub struct ReferenceClassObjective<T> {
    pub dictionary: Matrix<T>,
    pub x: Vec<T>,
    pub w: Matrix<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> ReferenceClassObjective<T> {
    /// Softmax probabilities of the `k − 1` explicit classes.
    pub fn class_probs(&self, c: &[T]) -> Result<Vec<T>> {
        let z = self.w.t_matvec(c)?;
        // log(1 + Σ exp z) evaluated as a log-sum-exp with an extra 0 logit
        let mut with_ref = z.to_vec();
        with_ref.push(T::zero());
        let p = softmax(&with_ref);
        Ok(p[..z.len()].to_vec())
    }

    pub fn value(&self, c: &[T]) -> Result<T> {
        let r = self.dictionary.matvec(c)?;
        let rec: T = r.iter().zip(&self.x).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let z = self.w.t_matvec(c)?;
        let mut with_ref = z.to_vec();
        with_ref.push(T::zero());
        Ok(T::of(0.5) * rec - dot(&self.y, &z) + log_sum_exp(&with_ref))
    }

    /// `Dᵀ(Dc − x) − W y + W d` with `d_i = exp(w_iᵀc) / (1 + Σ_l exp(w_lᵀc))`.
    pub fn gradient(&self, c: &[T]) -> Result<Vector<T>> {
        let r = self.dictionary.matvec(c)?;
        let resid: Vec<T> = r.iter().zip(&self.x).map(|(&a, &b)| a - b).collect();
        let mut g = self.dictionary.t_matvec(&resid)?;
        let d = self.class_probs(c)?;
        let coeff: Vec<T> = d.iter().zip(&self.y).map(|(&d, &y)| d - y).collect();
        let wd = self.w.matvec(&coeff)?;
        for (gi, wi) in g.iter_mut().zip(wd.iter()) {
            *gi += *wi;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(m: usize, k: usize) -> Vec<f64> {
        (0..m).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn uniform_softmax_loss_is_log_m() {
        let w = Matrix::zeros(4, 10);
        let x = [0.3, -1.0, 2.0, 0.5];
        let l = multinomial_loss(&one_hot(10, 3), &x, &w).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn two_class_direct_evaluation() {
        // w1.x = 5, w2.x = 0
        let w = Matrix::from_rows(&[[5.0, 0.0]]).unwrap();
        let l = multinomial_loss(&one_hot(2, 0), &[1.0], &w).unwrap();
        let expected = (1.0 + (-5.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-14);
        assert!((l - 0.006715).abs() < 1e-6);
    }

    #[test]
    fn shift_invariance() {
        // adding κ to every logit = appending a constant feature with weight κ
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let x = [0.4, -0.2, 1.3];
        let y = one_hot(5, 2);
        let base = multinomial_loss(&y, &x, &w).unwrap();
        for kappa in [-50.0, 0.5, 300.0] {
            let w2 = Matrix::from_fn(4, 5, |i, j| if i < 3 { w[(i, j)] } else { kappa });
            let shifted = multinomial_loss(&y, &[x[0], x[1], x[2], 1.0], &w2).unwrap();
            assert!((shifted - base).abs() < 1e-12, "kappa={kappa}");
        }
    }

    #[test]
    fn rejects_non_one_hot() {
        let w = Matrix::zeros(2, 3);
        assert!(matches!(
            multinomial_loss(&[0.5, 0.5, 0.0], &[1.0, 2.0], &w),
            Err(Error::NotOneHot { .. })
        ));
        assert!(multinomial_loss(&[0.0, 0.0, 0.0], &[1.0, 2.0], &w).is_err());
        assert!(multinomial_loss(&[1.0, 1.0, 0.0], &[1.0, 2.0], &w).is_err());
    }

    #[test]
    fn zero_weights_gradients() {
        let x = [1.5, -2.0];
        let y = one_hot(4, 1);
        let (gx, gw) = multinomial_grads(&y, &x, &Matrix::zeros(2, 4)).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        for i in 0..2 {
            for j in 0..4 {
                let expect = x[i] * (0.25 - y[j]);
                assert!((gw[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradients_vanish_when_prediction_matches_target() {
        let w = Matrix::from_rows(&[[40.0, -40.0]]).unwrap();
        let (gx, gw) = multinomial_grads(&one_hot(2, 0), &[1.0], &w).unwrap();
        assert!(gx[0].abs() < 1e-8);
        assert!(gw.as_slice().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let (n, m) = (4, 3);
            let w = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = one_hot(m, rng.random_range(0..m));
            let (gx, gw) = multinomial_grads(&y, &x, &w).unwrap();

            let mut fd = vec![0.0; n];
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                fd[i] = (multinomial_loss(&y, &xp, &w).unwrap() - multinomial_loss(&y, &xm, &w).unwrap()) / (2.0 * h);
            }
            let num: f64 = gx.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = gx.norm().max(fd.iter().map(|v| v * v).sum::<f64>().sqrt());
            assert!(num / den < 1e-6);

            let mut worst = 0.0f64;
            for i in 0..n {
                for j in 0..m {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[(i, j)] += h;
                    wm[(i, j)] -= h;
                    let fd = (multinomial_loss(&y, &x, &wp).unwrap() - multinomial_loss(&y, &x, &wm).unwrap()) / (2.0 * h);
                    worst = worst.max((fd - gw[(i, j)]).abs());
                }
            }
            assert!(worst / gw.frobenius_norm() < 1e-6);
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 0.0]);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batched_matches_single_sample() {
        let w = Matrix::from_rows(&[[0.2, -0.1, 0.4], [1.0, 0.3, -0.7]]).unwrap();
        let x = [0.5, -1.5];
        let y = one_hot(3, 2);
        let logits = Matrix::from_rows(&[w.t_matvec(&x).unwrap().to_vec()]).unwrap();
        let targets = Matrix::from_rows(&[y.clone()]).unwrap();
        let ce = cross_entropy_rows(&logits, &targets).unwrap();
        assert!((ce.mean_loss - multinomial_loss(&y, &x, &w).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn reference_class_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for trial in 0..20 {
            let (p, n, k) = (5, 3, 4);
            let obj = ReferenceClassObjective {
                dictionary: Matrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0)),
                x: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                w: Matrix::from_fn(n, k - 1, |_, _| rng.random_range(-2.0..2.0)),
                y: if trial % 4 == 3 { vec![0.0; k - 1] } else { one_hot(k - 1, trial % 3) },
            };
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = obj.gradient(&c).unwrap();
            for a in 0..n {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[a] += h;
                cm[a] -= h;
                let fd = (obj.value(&cp).unwrap() - obj.value(&cm).unwrap()) / (2.0 * h);
                assert!((fd - g[a]).abs() / g.norm() < 1e-6);
            }
        }
    }
}
