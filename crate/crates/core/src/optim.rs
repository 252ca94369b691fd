//! First-order update rules shared by the AM weight solvers and the backprop
//! baselines.

use crate::{Error, Matrix, Result, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for one parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    m: Matrix<T>,
    v: Matrix<T>,
    t: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            beta1: T::of(ADAM_BETA1),
            beta2: T::of(ADAM_BETA2),
            eps: T::of(ADAM_EPS),
        }
    }

    pub fn for_param(param: &Matrix<T>) -> Self {
        Self::new(param.rows(), param.cols())
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn step(&mut self, param: &mut Matrix<T>, grad: &Matrix<T>, lr: T) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                left: param.shape(),
                right: grad.shape(),
            });
        }
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        for (((p, &g), m), v) in param.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(m).zip(v) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Plain gradient step `p ← p − lr·g`.
pub fn sgd_step<T: Scalar>(param: &mut Matrix<T>, grad: &Matrix<T>, lr: T) -> Result<()> {
    param.axpy(-lr, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_normalized_gradient() {
        let g = Matrix::from_rows(&[[0.5, -2.0], [1e-3, 0.0]]).unwrap();
        let mut p = Matrix::<f64>::zeros(2, 2);
        let mut adam = Adam::for_param(&p);
        adam.step(&mut p, &g, 0.1).unwrap();
        for (pv, gv) in p.as_slice().iter().zip(g.as_slice()) {
            let expect = -0.1 * gv / (gv.abs() + 1e-8);
            assert!((pv - expect).abs() < 1e-15);
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn moments_stay_nonnegative_and_count_steps() {
        let mut p = Matrix::<f64>::zeros(1, 3);
        let mut adam = Adam::for_param(&p);
        for k in 0..25 {
            let g = Matrix::from_rows(&[[(k as f64).sin(), -1.0, 0.0]]).unwrap();
            adam.step(&mut p, &g, 0.01).unwrap();
            assert!(adam.second_moment().as_slice().iter().all(|&v| v >= 0.0));
        }
        assert_eq!(adam.step_count(), 25);
    }

    #[test]
    fn shape_checked() {
        let mut p = Matrix::<f64>::zeros(2, 2);
        let mut adam = Adam::for_param(&p);
        assert!(adam.step(&mut p, &Matrix::zeros(2, 3), 0.1).is_err());
    }
}
