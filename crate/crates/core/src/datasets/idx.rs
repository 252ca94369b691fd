//! The big-endian IDX container used by MNIST.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::{Error, Matrix, Result, Scalar};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image block: `count` images of `rows x cols` unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// One image per row, pixels scaled by `1/255`.
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        let scale = T::of(255.0);
        let data = self.pixels.iter().map(|&p| T::of(p as f64) / scale).collect();
        Matrix::from_vec(self.count, self.rows * self.cols, data).expect("length checked at decode")
    }
}

fn fmt_err(what: &'static str, offset: usize, msg: String) -> Error {
    Error::Format { what, offset, msg }
}

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            fmt_err(
                what,
                bytes.len(),
                format!("header truncated: expected at least {} bytes, found {}", offset + 4, bytes.len()),
            )
        })
}

fn check_payload(bytes: &[u8], header: usize, n: usize, what: &'static str) -> Result<()> {
    let expected = header + n;
    if bytes.len() < expected {
        return Err(fmt_err(
            what,
            bytes.len(),
            format!("payload truncated: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(fmt_err(
            what,
            expected,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    Ok(())
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    const WHAT: &str = "idx images";
    let magic = be_u32(bytes, 0, WHAT)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt_err(WHAT, 0, format!("wrong magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, WHAT)? as usize;
    let rows = be_u32(bytes, 8, WHAT)? as usize;
    let cols = be_u32(bytes, 12, WHAT)? as usize;
    let n = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| fmt_err(WHAT, 4, "dimensions overflow".into()))?;
    check_payload(bytes, 16, n, WHAT)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "idx labels";
    let magic = be_u32(bytes, 0, WHAT)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt_err(WHAT, 0, format!("wrong magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, WHAT)? as usize;
    check_payload(bytes, 8, count, WHAT)?;
    Ok(bytes[8..].to_vec())
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images as a `count x (rows·cols)` matrix scaled to `[0, 1]`.
pub fn read_idx_images<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    Ok(decode_idx_images(&fs::read(path)?)?.to_matrix())
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    Ok(decode_idx_labels(&fs::read(path)?)?.into_iter().map(usize::from).collect())
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    Ok(fs::write(path, encode_idx_images(images))?)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_idx_labels(labels))?)
}

/// Reads the four standard MNIST files from `dir` and returns
/// `(train, test)` with 10 classes.
pub fn load_mnist<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Dataset<T>, Dataset<T>)> {
    let dir = dir.as_ref();
    let load = |img: &str, lab: &str| -> Result<Dataset<T>> {
        let x = read_idx_images(dir.join(img))?;
        let y = read_idx_labels(dir.join(lab))?;
        Dataset::new(x, y, 10)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_images() -> IdxImages {
        IdxImages {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 128, 0, 1, 2, 3, 4],
        }
    }

    #[test]
    fn pixel_scaling() {
        let m: Matrix<f64> = decode_idx_images(&encode_idx_images(&two_images())).unwrap().to_matrix();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m.row(0), &[0.0, 1.0, 128.0 / 255.0, 0.0]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        write_idx_images(&p, &two_images()).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(decode_idx_images(&bytes).unwrap(), two_images());
        assert_eq!(encode_idx_images(&decode_idx_images(&bytes).unwrap()), bytes);

        let q = dir.path().join("lab");
        write_idx_labels(&q, &[7, 0, 9]).unwrap();
        assert_eq!(read_idx_labels(&q).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn truncation_names_lengths() {
        let bytes = encode_idx_images(&two_images());
        let err = decode_idx_images(&bytes[..bytes.len() - 1]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 24") && msg.contains("found 23"), "{msg}");
        let lab = encode_idx_labels(&[1, 2, 3]);
        assert!(decode_idx_labels(&lab[..9]).unwrap_err().to_string().contains("expected 11"));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_idx_images(&two_images());
        bytes[3] = 0x01;
        assert!(matches!(decode_idx_images(&bytes), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_idx_labels(&encode_idx_images(&two_images())), Err(Error::Format { offset: 0, .. })));
    }
}
