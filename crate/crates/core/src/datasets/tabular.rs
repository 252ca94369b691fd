//! Numeric CSV with the class label in the first column.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::Dataset;
use crate::{Error, Matrix, Result, Scalar};

/// Columns whose standard deviation falls below this are mapped to zero.
pub const STD_GUARD: f64 = 1e-12;

/// Per-column mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<T: Scalar>(x: &Matrix<T>) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn apply<T: Scalar>(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "standardize",
                left: x.shape(),
                right: (1, self.mean.len()),
            });
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            if self.std[j] < STD_GUARD {
                T::zero()
            } else {
                T::of((x[(i, j)].as_f64() - self.mean[j]) / self.std[j])
            }
        }))
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Parses CSV text without scaling. A first record containing any
/// non-numeric cell is treated as a header.
pub fn parse_csv_labeled<T: Scalar>(text: impl Read) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            row: r + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        if r == 0 && rec.iter().any(|c| parse_cell(c).is_none()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Csv {
                row: r + 1,
                col: rec.len(),
                msg: "need a label and at least one feature".into(),
            });
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Csv {
                row: r + 1,
                col: rec.len(),
                msg: format!("expected {} columns", width.unwrap_or(0)),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell).filter(|v| v.is_finite()).ok_or_else(|| Error::Csv {
                row: r + 1,
                col: c + 1,
                msg: format!("not a number: '{cell}'"),
            })?;
            if c == 0 {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Csv {
                        row: r + 1,
                        col: 1,
                        msg: format!("label '{cell}' is not a class index"),
                    });
                }
                labels.push(v as usize);
            } else {
                data.push(T::of(v));
            }
        }
    }
    let Some(width) = width else {
        return Err(Error::Csv {
            row: 0,
            col: 0,
            msg: "no data rows".into(),
        });
    };
    let m = labels.iter().max().map_or(0, |&l| l + 1);
    let x = Matrix::from_vec(labels.len(), width - 1, data)?;
    Dataset::new(x, labels, m)
}

pub fn read_csv_unscaled<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    parse_csv_labeled(File::open(path)?)
}

/// Reads and standardizes every feature column over the whole file. Fit a
/// [`Standardizer`] on a training split instead when holding data out.
pub fn read_csv_labeled<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let ds = read_csv_unscaled::<T>(path)?;
    let x = Standardizer::fit(&ds.features).apply(&ds.features)?;
    ds.with_features(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows_standardize_to_unit() {
        let f = write_tmp("0,1.0\n1,3.0\n");
        let ds = read_csv_labeled::<f64>(f.path()).unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.features.as_slice(), &[-1.0, 1.0]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn header_detected() {
        let ds = parse_csv_labeled::<f64>("label,a,b\n1,2,3\n0,4,5\n".as_bytes()).unwrap();
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.features.row(1), &[4.0, 5.0]);
    }

    #[test]
    fn empty_and_bad_cells() {
        assert!(matches!(parse_csv_labeled::<f64>("".as_bytes()), Err(Error::Csv { .. })));
        let err = parse_csv_labeled::<f64>("0,1\n1,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Csv { row: 2, col: 2, .. }), "{err}");
        assert!(parse_csv_labeled::<f64>("0.5,1\n".as_bytes()).is_err());
        assert!(parse_csv_labeled::<f64>("0,1,2\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let f = write_tmp("0,5,1\n1,5,2\n0,5,3\n");
        let ds = read_csv_labeled::<f64>(f.path()).unwrap();
        assert!((0..3).all(|i| ds.features[(i, 0)] == 0.0));
    }
}
