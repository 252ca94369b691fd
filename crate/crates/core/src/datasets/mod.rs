//! Labeled datasets, file readers, synthetic generators and seeded
//! minibatch streaming.

mod idx;
mod tabular;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Matrix, Result, Scalar};

pub use idx::{
    decode_idx_images, decode_idx_labels, encode_idx_images, encode_idx_labels, load_mnist, read_idx_images,
    read_idx_labels, write_idx_images, write_idx_labels, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use tabular::{parse_csv_labeled, read_csv_labeled, read_csv_unscaled, Standardizer, STD_GUARD};

/// Features (one sample per row) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Matrix<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!("label {bad} outside [0, {num_classes})")));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite {
                stage: "dataset features",
                layer: 0,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn one_hot_targets(&self) -> Matrix<T> {
        one_hot(&self.labels, self.num_classes)
    }

    pub fn with_features(&self, features: Matrix<T>) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.num_classes)
    }
}

pub fn one_hot<T: Scalar>(labels: &[usize], num_classes: usize) -> Matrix<T> {
    let mut y = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = T::one();
    }
    y
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Seeded random partition into `(train, held_out)`; the train part gets
/// `round(n · train_fraction)` samples.
pub fn split<T: Scalar>(ds: &Dataset<T>, spec: SplitSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {} not in (0, 1]",
            spec.train_fraction
        )));
    }
    let perm = permutation(ds.len(), spec.seed);
    let n_train = ((ds.len() as f64) * spec.train_fraction).round() as usize;
    let (a, b) = perm.split_at(n_train.min(ds.len()));
    Ok((ds.subset(a), ds.subset(b)))
}

/// One minibatch: inputs, one-hot targets and the source row indices.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub x: Matrix<T>,
    pub y: Matrix<T>,
    pub indices: Vec<usize>,
}

/// The epoch's batches in order. The permutation is seeded with
/// `seed ^ epoch`; the final partial batch is kept.
pub fn minibatches<T: Scalar>(ds: &Dataset<T>, batch: usize, seed: u64, epoch: usize) -> Result<Vec<Batch<T>>> {
    if batch == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let perm = permutation(ds.len(), seed ^ epoch as u64);
    Ok(perm
        .chunks(batch)
        .map(|idx| {
            let labels: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
            Batch {
                x: ds.features.select_rows(idx),
                y: one_hot(&labels, ds.num_classes),
                indices: idx.to_vec(),
            }
        })
        .collect())
}

/// `m` unit-variance Gaussian clusters in `p` dimensions. Class `k` is
/// centred at `(k − (m−1)/2) · separation` on the first axis, so adjacent
/// means are `separation` apart. Labels cycle `0, 1, …, m−1`.
pub fn make_blobs<T: Scalar>(n: usize, p: usize, m: usize, separation: f64, seed: u64) -> Result<Dataset<T>> {
    if p == 0 || m == 0 {
        return Err(Error::InvalidConfig("make_blobs needs p >= 1 and m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % m).collect();
    let centre = (m as f64 - 1.0) / 2.0;
    let mut x = Matrix::zeros(n, p);
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mean = if j == 0 { (l as f64 - centre) * separation } else { 0.0 };
            x[(i, j)] = T::of(mean + z);
        }
    }
    Dataset::new(x, labels, m)
}

/// `k x k` average pooling of `rows x cols` images followed by a row-major
/// scan. Output row `i` is the length-`T = (rows/k)(cols/k)` sequence of
/// image `i` (one scalar per step).
pub fn pool_sequence<T: Scalar>(images: &Matrix<T>, rows: usize, cols: usize, k: usize) -> Result<Matrix<T>> {
    if k == 0 || !rows.is_multiple_of(k) || !cols.is_multiple_of(k) {
        return Err(Error::InvalidConfig(format!(
            "pooling factor {k} must divide image size {rows}x{cols}"
        )));
    }
    if images.cols() != rows * cols {
        return Err(Error::ShapeMismatch {
            op: "pool_sequence",
            left: images.shape(),
            right: (rows, cols),
        });
    }
    let (pr, pc) = (rows / k, cols / k);
    let inv = T::one() / T::of((k * k) as f64);
    let mut out = Matrix::zeros(images.rows(), pr * pc);
    for n in 0..images.rows() {
        let img = images.row(n);
        let seq = out.row_mut(n);
        for bi in 0..pr {
            for bj in 0..pc {
                let mut s = T::zero();
                for di in 0..k {
                    for dj in 0..k {
                        s += img[(bi * k + di) * cols + bj * k + dj];
                    }
                }
                seq[bi * pc + bj] = s * inv;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset<f64> {
        let x = Matrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
        Dataset::new(x, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Matrix::<f64>::zeros(2, 1), vec![0, 3], 3).is_err());
        assert!(Dataset::new(Matrix::<f64>::zeros(2, 1), vec![0], 3).is_err());
        assert!(Dataset::new(Matrix::filled(1, 1, f64::NAN), vec![0], 1).is_err());
    }

    #[test]
    fn single_batch_when_batch_exceeds_n() {
        let ds = toy(5);
        let b = minibatches(&ds, 10, 3, 0).unwrap();
        assert_eq!(b.len(), 1);
        let mut idx = b[0].indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        for (r, &i) in b[0].indices.iter().enumerate() {
            assert_eq!(b[0].x.row(r), ds.features.row(i));
            assert_eq!(b[0].y[(r, ds.labels[i])], 1.0);
        }
    }

    #[test]
    fn batches_cover_each_sample_once_with_partial_tail() {
        let ds = toy(23);
        let b = minibatches(&ds, 5, 11, 2).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b[4].x.rows(), 3);
        let mut all: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_reorder() {
        let ds = toy(10);
        let e0: Vec<usize> = minibatches(&ds, 3, 7, 0).unwrap().into_iter().flat_map(|b| b.indices).collect();
        let e1: Vec<usize> = minibatches(&ds, 3, 7, 1).unwrap().into_iter().flat_map(|b| b.indices).collect();
        let again: Vec<usize> = minibatches(&ds, 3, 7, 0).unwrap().into_iter().flat_map(|b| b.indices).collect();
        assert_ne!(e0, e1);
        assert_eq!(e0, again);
        assert!(minibatches(&ds, 0, 7, 0).is_err());
    }

    #[test]
    fn split_is_exact_partition() {
        let ds = toy(12);
        let (a, b) = split(&ds, SplitSpec { train_fraction: 5.0 / 6.0, seed: 4 }).unwrap();
        assert_eq!((a.len(), b.len()), (10, 2));
        let mut rows: Vec<f64> = a.features.row_iter().chain(b.features.row_iter()).map(|r| r[0]).collect();
        rows.sort_by(f64::total_cmp);
        assert_eq!(rows, (0..12).map(|i| (2 * i) as f64).collect::<Vec<_>>());
        let (a2, _) = split(&ds, SplitSpec { train_fraction: 5.0 / 6.0, seed: 4 }).unwrap();
        assert_eq!(a, a2);
        assert!(split(&ds, SplitSpec { train_fraction: 0.0, seed: 4 }).is_err());
    }

    #[test]
    fn blobs_deterministic_and_separable() {
        let a = make_blobs::<f64>(200, 2, 2, 10.0, 5).unwrap();
        let b = make_blobs::<f64>(200, 2, 2, 10.0, 5).unwrap();
        assert_eq!(a, b);
        // perceptron oracle with a bias feature
        let mut w = [0.0f64; 3];
        for _ in 0..100 {
            let mut mistakes = 0;
            for i in 0..a.len() {
                let x = [a.features[(i, 0)], a.features[(i, 1)], 1.0];
                let y = if a.labels[i] == 1 { 1.0 } else { -1.0 };
                let s: f64 = w.iter().zip(&x).map(|(w, x)| w * x).sum();
                if y * s <= 0.0 {
                    mistakes += 1;
                    for k in 0..3 {
                        w[k] += y * x[k];
                    }
                }
            }
            if mistakes == 0 {
                return;
            }
        }
        panic!("perceptron did not separate the blobs");
    }

    #[test]
    fn blobs_without_separation_share_a_distribution() {
        let ds = make_blobs::<f64>(4000, 1, 2, 0.0, 9).unwrap();
        let mean = |k: usize| {
            let v: Vec<f64> = (0..ds.len()).filter(|&i| ds.labels[i] == k).map(|i| ds.features[(i, 0)]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean(0) - mean(1)).abs() < 0.15);
    }

    #[test]
    fn pooling() {
        let img = Matrix::from_fn(2, 16, |n, i| if n == 0 { i as f64 } else { 3.5 });
        let k1 = pool_sequence(&img, 4, 4, 1).unwrap();
        assert_eq!(k1, img);
        let k2 = pool_sequence(&img, 4, 4, 2).unwrap();
        // blocks {0,1,4,5}, {2,3,6,7}, {8,9,12,13}, {10,11,14,15}
        assert_eq!(k2.row(0), &[2.5, 4.5, 10.5, 12.5]);
        assert_eq!(k2.row(1), &[3.5; 4]);
        assert!(pool_sequence(&img, 4, 4, 3).is_err());
    }
}
