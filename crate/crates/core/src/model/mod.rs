//! Fully connected networks without bias terms and the code representation
//! used by alternating minimization.
//!
//! For hidden layers `l = 1..L` the code is the linear pre-activation
//! `c^l = W^l a^{l-1}` with `a^0 = x` and `a^l = σ_l(c^l)`. The output layer
//! `W^{L+1}` feeds `σ_L(c^L)` into the multinomial loss. Samples are stored
//! row-wise, so in matrix form `C^l = A^{l-1} · (W^l)ᵀ`.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{activate_matrix, cross_entropy_rows, softmax_rows, ActivationKind};
use crate::{Error, Matrix, Result, Scalar};

pub use checkpoint::{
    read_checkpoint, read_rnn_checkpoint, write_checkpoint, write_rnn_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    RNN_CHECKPOINT_MAGIC,
};

/// Architecture: `[N, m_1, …, m_L, m]` plus one activation per hidden layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activations: Vec<ActivationKind>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activations: Vec<ActivationKind>, seed: u64) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            hidden_activations,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `input → hidden… → classes` with the same activation on every hidden
    /// layer.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, activation: ActivationKind, seed: u64) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::new(sizes, vec![activation; hidden.len()], seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::InvalidSpec(format!(
                "need at least one hidden layer, got sizes {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!("zero-width layer in {:?}", self.layer_sizes)));
        }
        if self.hidden_activations.len() != self.num_hidden() {
            return Err(Error::InvalidSpec(format!(
                "{} hidden layers but {} activations",
                self.num_hidden(),
                self.hidden_activations.len()
            )));
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn num_hidden(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Shape `(out, in)` of weight matrix `W^l`, `l = 1..=L+1`.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l - 1])
    }
}

/// Weights `W^1 … W^{L+1}`; `weights[i]` is `W^{i+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<T> {
    spec: NetworkSpec,
    weights: Vec<Matrix<T>>,
}

/// Per-sample codes for a minibatch; `codes[i]` is `c^{i+1}` (`batch x m_{i+1}`).
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBatch<T> {
    pub codes: Vec<Matrix<T>>,
}

impl<T: Scalar> CodeBatch<T> {
    pub fn batch(&self) -> usize {
        self.codes.first().map_or(0, Matrix::rows)
    }

    pub fn is_finite(&self) -> bool {
        self.codes.iter().all(Matrix::is_finite)
    }
}

impl<T: Scalar> NetworkState<T> {
    /// Uniform `±1/√fan_in` initialization from a ChaCha stream seeded with
    /// `spec.seed`.
    pub fn init(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let weights = (1..spec.layer_sizes.len())
            .map(|l| {
                let (out, fan_in) = spec.weight_shape(l);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Matrix::from_fn(out, fan_in, |_, _| T::of(rng.random_range(-bound..=bound)))
            })
            .collect();
        Ok(Self { spec, weights })
    }

    pub fn from_weights(spec: NetworkSpec, weights: Vec<Matrix<T>>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.layer_sizes.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} weight matrices, got {}",
                spec.layer_sizes.len() - 1,
                weights.len()
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            let expect = spec.weight_shape(i + 1);
            if w.shape() != expect {
                return Err(Error::ShapeMismatch {
                    op: "from_weights",
                    left: expect,
                    right: w.shape(),
                });
            }
        }
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_hidden(&self) -> usize {
        self.spec.num_hidden()
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.weights
    }

    /// `W^l`, `l = 1..=L+1`.
    pub fn weight(&self, l: usize) -> &Matrix<T> {
        &self.weights[l - 1]
    }

    pub fn output_weight(&self) -> &Matrix<T> {
        self.weights.last().expect("validated")
    }

    /// `σ_l`, `l = 1..=L`.
    pub fn activation(&self, l: usize) -> ActivationKind {
        self.spec.hidden_activations[l - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.spec.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "encode_input",
                left: x.shape(),
                right: self.weights[0].shape(),
            });
        }
        Ok(())
    }

    pub fn check_codes(&self, codes: &CodeBatch<T>) -> Result<()> {
        let batch = codes.batch();
        if codes.codes.len() != self.num_hidden() {
            return Err(Error::InvalidSpec(format!(
                "{} code layers for a network with {} hidden layers",
                codes.codes.len(),
                self.num_hidden()
            )));
        }
        for (i, c) in codes.codes.iter().enumerate() {
            if c.shape() != (batch, self.spec.layer_sizes[i + 1]) {
                return Err(Error::ShapeMismatch {
                    op: "codes",
                    left: (batch, self.spec.layer_sizes[i + 1]),
                    right: c.shape(),
                });
            }
        }
        Ok(())
    }

    /// Forward pass that materializes every hidden code.
    pub fn encode_input(&self, x: &Matrix<T>) -> Result<CodeBatch<T>> {
        self.check_input(x)?;
        let mut codes = Vec::with_capacity(self.num_hidden());
        let mut c = x.matmul_t(&self.weights[0])?;
        for l in 2..=self.num_hidden() {
            let a = activate_matrix(self.activation(l - 1), &c);
            let next = a.matmul_t(&self.weights[l - 1])?;
            codes.push(c);
            c = next;
        }
        codes.push(c);
        Ok(CodeBatch { codes })
    }

    /// `a^l = σ_l(c^l)` with `a^0 = x`.
    pub fn layer_input(&self, x: &Matrix<T>, codes: &CodeBatch<T>, l: usize) -> Matrix<T> {
        if l == 0 {
            x.clone()
        } else {
            activate_matrix(self.activation(l), &codes.codes[l - 1])
        }
    }

    pub fn output_logits(&self, codes: &CodeBatch<T>) -> Result<Matrix<T>> {
        self.check_codes(codes)?;
        let l = self.num_hidden();
        let a = activate_matrix(self.activation(l), &codes.codes[l - 1]);
        a.matmul_t(self.output_weight())
    }

    /// Row-wise class probabilities `softmax(σ_L(c^L) · (W^{L+1})ᵀ)`.
    pub fn predict(&self, codes: &CodeBatch<T>) -> Result<Matrix<T>> {
        Ok(softmax_rows(&self.output_logits(codes)?))
    }

    /// Mean multinomial loss of the batch.
    pub fn batch_loss(&self, codes: &CodeBatch<T>, targets: &Matrix<T>) -> Result<T> {
        Ok(cross_entropy_rows(&self.output_logits(codes)?, targets)?.mean_loss)
    }

    /// Mean loss and number of correct argmax predictions of a plain forward
    /// pass.
    pub fn evaluate(&self, x: &Matrix<T>, targets: &Matrix<T>) -> Result<(T, usize)> {
        let codes = self.encode_input(x)?;
        let ce = cross_entropy_rows(&self.output_logits(&codes)?, targets)?;
        Ok((ce.mean_loss, ce.correct))
    }

    /// `Σ_l ‖c^l − W^l σ_{l−1}(c^{l−1})‖²` summed over the batch (without the
    /// μ factor).
    pub fn penalty(&self, x: &Matrix<T>, codes: &CodeBatch<T>) -> Result<T> {
        self.check_input(x)?;
        self.check_codes(codes)?;
        let mut total = T::zero();
        for l in 1..=self.num_hidden() {
            let pred = self.layer_input(x, codes, l - 1).matmul_t(self.weight(l))?;
            total += codes.codes[l - 1].sub(&pred)?.sum_squares();
        }
        Ok(total)
    }

    pub fn cast<U: Scalar>(&self) -> NetworkState<U> {
        NetworkState {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(Matrix::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{argmax, one_hot_index};
    use ActivationKind::*;

    fn rand_matrix(seed: u64, r: usize, c: usize) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn one_hot_rows(labels: &[usize], m: usize) -> Matrix<f64> {
        Matrix::from_fn(labels.len(), m, |i, j| if labels[i] == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(vec![4, 2], vec![], 0).is_err());
        assert!(NetworkSpec::new(vec![4, 0, 2], vec![ReLU], 0).is_err());
        assert!(NetworkSpec::new(vec![4, 3, 2], vec![ReLU, ReLU], 0).is_err());
        assert!(NetworkSpec::new(vec![4, 3, 2], vec![Tanh], 0).is_ok());
    }

    #[test]
    fn init_is_deterministic_with_shape_chain_and_bounds() {
        let spec = NetworkSpec::new(vec![4, 3, 2], vec![ReLU], 42).unwrap();
        let a = NetworkState::<f64>::init(spec.clone()).unwrap();
        let b = NetworkState::<f64>::init(spec).unwrap();
        let bits = |n: &NetworkState<f64>| -> Vec<u64> {
            n.weights().iter().flat_map(|w| w.as_slice().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.weight(1).shape(), (3, 4));
        assert_eq!(a.weight(2).shape(), (2, 3));
        assert!(a.weight(1).as_slice().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn zero_weights_give_zero_codes() {
        let spec = NetworkSpec::mlp(3, &[4, 2], 2, ReLU, 1).unwrap();
        let weights = vec![Matrix::zeros(4, 3), Matrix::zeros(2, 4), Matrix::zeros(2, 2)];
        let net = NetworkState::from_weights(spec, weights).unwrap();
        let codes = net.encode_input(&rand_matrix(3, 5, 3)).unwrap();
        assert!(codes.codes.iter().all(|c| c.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_hidden_layer_code_is_input_times_weights() {
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(5, &[3], 2, Tanh, 9).unwrap()).unwrap();
        let x = rand_matrix(4, 6, 5);
        let codes = net.encode_input(&x).unwrap();
        assert_eq!(codes.codes[0], x.matmul(&net.weight(1).transpose()).unwrap());
    }

    #[test]
    fn encoded_codes_have_zero_penalty() {
        let spec = NetworkSpec::new(vec![6, 5, 4, 3, 3], vec![ReLU, Tanh, Identity], 77).unwrap();
        let net = NetworkState::<f64>::init(spec).unwrap();
        let x = rand_matrix(8, 5, 6);
        let codes = net.encode_input(&x).unwrap();
        assert!(net.penalty(&x, &codes).unwrap() < 1e-20);
    }

    #[test]
    fn predict_uniform_and_normalized() {
        let spec = NetworkSpec::mlp(3, &[4], 10, ReLU, 2).unwrap();
        let mut net = NetworkState::<f64>::init(spec).unwrap();
        let x = rand_matrix(1, 7, 3);
        let p = net.predict(&net.encode_input(&x).unwrap()).unwrap();
        for i in 0..7 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        *net.weights_mut().last_mut().unwrap() = Matrix::zeros(10, 4);
        let codes = net.encode_input(&x).unwrap();
        let p = net.predict(&codes).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let y = one_hot_rows(&[0, 1, 2, 3, 4, 5, 6], 10);
        assert!((net.batch_loss(&codes, &y).unwrap() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn predict_argmax_matches_naive_logits() {
        let spec = NetworkSpec::mlp(4, &[6, 5], 3, ReLU, 13).unwrap();
        let net = NetworkState::<f64>::init(spec).unwrap();
        let x = rand_matrix(6, 10, 4);
        let p = net.predict(&net.encode_input(&x).unwrap()).unwrap();
        for i in 0..10 {
            // naive per-sample forward pass
            let mut a = x.row(i).to_vec();
            for l in 1..=2 {
                let w = net.weight(l);
                a = (0..w.rows())
                    .map(|r| (0..w.cols()).map(|k| w[(r, k)] * a[k]).sum::<f64>().max(0.0))
                    .collect();
            }
            let w = net.output_weight();
            let logits: Vec<f64> = (0..w.rows()).map(|r| (0..w.cols()).map(|k| w[(r, k)] * a[k]).sum()).collect();
            assert_eq!(argmax(p.row(i)), argmax(&logits));
        }
    }

    #[test]
    fn batch_loss_single_sample_and_permutation() {
        use crate::numerics::multinomial_loss;
        let spec = NetworkSpec::mlp(3, &[4], 3, Tanh, 5).unwrap();
        let net = NetworkState::<f64>::init(spec).unwrap();
        let x = rand_matrix(2, 4, 3);
        let labels = [2, 0, 1, 1];
        let y = one_hot_rows(&labels, 3);
        let codes = net.encode_input(&x).unwrap();
        let full = net.batch_loss(&codes, &y).unwrap();

        let perm = [3, 1, 0, 2];
        let codes_p = net.encode_input(&x.select_rows(&perm)).unwrap();
        let permuted = net.batch_loss(&codes_p, &y.select_rows(&perm)).unwrap();
        assert!((full - permuted).abs() < 1e-15);

        let x0 = x.select_rows(&[0]);
        let c0 = net.encode_input(&x0).unwrap();
        let single = net.batch_loss(&c0, &y.select_rows(&[0])).unwrap();
        let a = activate_matrix(Tanh, &c0.codes[0]);
        let direct = multinomial_loss(y.row(0), a.row(0), &net.output_weight().transpose()).unwrap();
        assert!((single - direct).abs() < 1e-14);
        assert_eq!(one_hot_index(y.row(0), 0).unwrap(), 2);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = NetworkState::<f64>::init(NetworkSpec::mlp(3, &[4], 2, ReLU, 0).unwrap()).unwrap();
        assert!(matches!(net.encode_input(&Matrix::zeros(2, 5)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn f32_forward_pass() {
        let spec = NetworkSpec::mlp(3, &[4], 2, ReLU, 3).unwrap();
        let net64 = NetworkState::<f64>::init(spec).unwrap();
        let net32: NetworkState<f32> = net64.cast();
        let x = rand_matrix(1, 3, 3);
        let p64 = net64.predict(&net64.encode_input(&x).unwrap()).unwrap();
        let p32 = net32.predict(&net32.encode_input(&x.cast()).unwrap()).unwrap();
        for (a, b) in p64.as_slice().iter().zip(p32.as_slice()) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
