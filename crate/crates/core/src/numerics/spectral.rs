use crate::{Error, Matrix, Result, Scalar};

pub const POWER_REL_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;
const SYMMETRY_TOL: f64 = 1e-10;

fn check_symmetric<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    let Some(asym) = m.asymmetry() else {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    };
    let scale = m.as_slice().iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    if asym.as_f64() > SYMMETRY_TOL * scale.as_f64() {
        return Err(Error::NotSymmetric { max_diff: asym.as_f64() });
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration (Rayleigh quotient, relative tolerance 1e-10, at most 10,000
/// iterations).
pub fn lambda_max<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    check_symmetric(m)?;
    let n = m.rows();
    if n == 0 {
        return Ok(T::zero());
    }
    // Uneven start so that no eigenvector of a diagonal matrix is orthogonal
    // to it.
    let mut v: Vec<T> = (0..n).map(|i| T::one() + T::of(0.1 * ((i % 7) as f64 + 1.0))).collect();
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);

    let tol = T::of(POWER_REL_TOL);
    let mut lambda = T::zero();
    for _ in 0..POWER_MAX_ITERS {
        let w = m.matvec(&v)?;
        let next: T = w.dot(&v);
        let wn = w.norm();
        if wn == T::zero() {
            return Ok(T::zero());
        }
        v = w.iter().map(|&x| x / wn).collect();
        let converged = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    Ok(lambda)
}

/// Upper bound on the Hessian spectrum of the reference-class code objective
/// (`ReferenceClassObjective`): `λmax(DᵀD) + k·λmax(WWᵀ)` where `W` holds the
/// `k − 1` non-reference class columns.
pub fn lipschitz_bound<T: Scalar>(dictionary: &Matrix<T>, w: &Matrix<T>) -> Result<T> {
    if dictionary.cols() != w.rows() {
        return Err(Error::ShapeMismatch {
            op: "lipschitz_bound",
            left: dictionary.shape(),
            right: w.shape(),
        });
    }
    let k = T::of((w.cols() + 1) as f64);
    let dtd = dictionary.t_matmul(dictionary)?;
    let wwt = w.matmul_t(w)?;
    Ok(lambda_max(&dtd)? + k * lambda_max(&wwt)?)
}

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi
/// rotations. Used as an independent check on `lambda_max`.
pub fn symmetric_eigenvalues<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.as_f64() < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(ev)
}
