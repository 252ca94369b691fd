use std::fmt;
use std::str::FromStr;

use crate::{Error, Matrix, Result, Scalar, Vector};

/// Elementwise transfer function of a hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    ReLU,
    Tanh,
    /// `sign(x)` with `sign(0) = +1`; not differentiable, handled
    /// combinatorially by the code solver.
    Sign,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::ReLU => x.max(T::zero()),
            Self::Tanh => x.tanh(),
            Self::Sign => {
                if x >= T::zero() {
                    T::one()
                } else {
                    -T::one()
                }
            }
            Self::Identity => x,
        }
    }

    /// Derivative at `x`. `ReLU'(0) = 0`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> Result<T> {
        Ok(match self {
            Self::ReLU => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Self::Identity => T::one(),
            Self::Sign => return Err(Error::UnsupportedDerivative(self)),
        })
    }

    pub fn is_differentiable(self) -> bool {
        self != Self::Sign
    }

    /// Stable integer tag used by the checkpoint format.
    pub fn tag(self) -> u32 {
        match self {
            Self::ReLU => 0,
            Self::Tanh => 1,
            Self::Sign => 2,
            Self::Identity => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Self::ReLU,
            1 => Self::Tanh,
            2 => Self::Sign,
            3 => Self::Identity,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ReLU => "relu",
            Self::Tanh => "tanh",
            Self::Sign => "sign",
            Self::Identity => "identity",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::ReLU),
            "tanh" => Ok(Self::Tanh),
            "sign" => Ok(Self::Sign),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(Error::InvalidConfig(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn activate<T: Scalar>(kind: ActivationKind, v: &[T]) -> Vector<T> {
    Vector::from_vec(v.iter().map(|&x| kind.apply(x)).collect())
}

pub fn activate_grad<T: Scalar>(kind: ActivationKind, v: &[T]) -> Result<Vector<T>> {
    v.iter()
        .map(|&x| kind.derivative(x))
        .collect::<Result<Vec<_>>>()
        .map(Vector::from_vec)
}

pub fn activate_matrix<T: Scalar>(kind: ActivationKind, m: &Matrix<T>) -> Matrix<T> {
    if kind == ActivationKind::Identity {
        return m.clone();
    }
    m.map(|x| kind.apply(x))
}

pub fn activate_grad_matrix<T: Scalar>(kind: ActivationKind, m: &Matrix<T>) -> Result<Matrix<T>> {
    if !kind.is_differentiable() {
        return Err(Error::UnsupportedDerivative(kind));
    }
    Ok(m.map(|x| kind.derivative(x).expect("differentiable")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActivationKind::*;

    #[test]
    fn values() {
        assert_eq!(activate(ReLU, &[-1.0, 0.0, 2.0]).to_vec(), vec![0.0, 0.0, 2.0]);
        assert_eq!(activate(Sign, &[-0.5, 0.0, 3.0]).to_vec(), vec![-1.0, 1.0, 1.0]);
        assert_eq!(activate(Tanh, &[0.0]).to_vec(), vec![0.0]);
        assert_eq!(activate(Identity, &[-7.5, 2.0]).to_vec(), vec![-7.5, 2.0]);
    }

    #[test]
    fn derivatives() {
        assert_eq!(activate_grad(ReLU, &[-1.0, 0.0, 2.0]).unwrap().to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(activate_grad(Tanh, &[0.0]).unwrap().to_vec(), vec![1.0]);
        assert!(matches!(
            activate_grad(Sign, &[1.0]),
            Err(Error::UnsupportedDerivative(Sign))
        ));
    }

    #[test]
    fn tanh_derivative_matches_central_difference() {
        let h = 1e-6;
        for i in 0..50 {
            let x = -3.0 + 6.0 * (i as f64) / 49.0 + 0.013;
            let fd = ((x + h).tanh() - (x - h).tanh()) / (2.0 * h);
            let an = Tanh.derivative(x).unwrap();
            assert!(((an - fd) / an).abs() < 1e-7, "x={x} an={an} fd={fd}");
        }
    }

    #[test]
    fn parse_and_tags_roundtrip() {
        for k in [ReLU, Tanh, Sign, Identity] {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
            assert_eq!(ActivationKind::from_tag(k.tag()), Some(k));
        }
        assert!("softplus".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn ranges() {
        let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.7).collect();
        assert!(activate(Sign, &xs).iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(activate(ReLU, &xs).iter().all(|&v| v >= 0.0));
        assert!(activate(Tanh, &xs[15..26]).iter().all(|&v| v > -1.0 && v < 1.0));
    }
}
