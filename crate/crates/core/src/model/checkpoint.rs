//! Flat binary checkpoint container.
//!
//! Layout (all little-endian):
//! `"AMNET1\0\0"`, `u32` version, `u32` L, then `L+2` `u32` layer sizes,
//! `L` `u32` activation tags, `u64` seed, and finally every weight matrix
//! `W^1 … W^{L+1}` as row-major `f64`.
//!
//! Elman networks use `"AMRNN1\0\0"`, `u32` version, `u32` d, p, T, m, the
//! `u32` activation tag, then `U, W, b, V, C` as row-major `f64`.

use std::io::{Read, Write};

use super::{NetworkSpec, NetworkState};
use crate::numerics::ActivationKind;
use crate::rnn::ElmanState;
use crate::{Error, Matrix, Result, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMNET1\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const RNN_CHECKPOINT_MAGIC: &[u8; 8] = b"AMRNN1\0\0";

fn push_matrix<T: Scalar>(buf: &mut Vec<u8>, m: &Matrix<T>) {
    for &v in m.as_slice() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(net: &NetworkState<T>, mut out: W) -> Result<()> {
    let spec = net.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.num_hidden() as u32).to_le_bytes());
    for &s in &spec.layer_sizes {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for a in &spec.hidden_activations {
        buf.extend_from_slice(&a.tag().to_le_bytes());
    }
    buf.extend_from_slice(&spec.seed.to_le_bytes());
    for w in net.weights() {
        push_matrix(&mut buf, w);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_rnn_checkpoint<T: Scalar, W: Write>(st: &ElmanState<T>, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(RNN_CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for n in [st.hidden(), st.input_dim(), st.steps(), st.classes()] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    buf.extend_from_slice(&st.activation.tag().to_le_bytes());
    for m in [&st.u, &st.w, &st.b, &st.v, &st.c] {
        push_matrix(&mut buf, m);
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                what: "checkpoint",
                offset: self.pos,
                msg: format!("need {n} more bytes, {} available", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bad(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            what: "checkpoint",
            offset,
            msg,
        }
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, name: &str) -> Result<Matrix<T>> {
        let n = rows.checked_mul(cols).ok_or_else(|| self.bad(self.pos, "weight size overflow".into()))?;
        let avail = self.bytes.len() - self.pos;
        if avail / 8 < n {
            return Err(self.bad(self.pos, format!("{name} needs {} bytes, {avail} available", n * 8)));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::of(self.f64()?));
        }
        Matrix::from_vec(rows, cols, data)
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.bad(0, "bad magic".into()));
        }
        let version = self.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(self.bad(8, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<NetworkState<T>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    cur.header(CHECKPOINT_MAGIC)?;
    let l = cur.u32()? as usize;
    // every hidden layer costs at least 8 header bytes, which bounds l by the
    // file size before anything is allocated
    if l == 0 || l > bytes.len() / 8 {
        return Err(cur.bad(12, format!("implausible hidden layer count {l}")));
    }
    let mut sizes = Vec::with_capacity(l + 2);
    for _ in 0..l + 2 {
        sizes.push(cur.u32()? as usize);
    }
    let mut acts = Vec::with_capacity(l);
    for _ in 0..l {
        let at = cur.pos;
        let tag = cur.u32()?;
        acts.push(ActivationKind::from_tag(tag).ok_or_else(|| cur.bad(at, format!("unknown activation tag {tag}")))?);
    }
    let seed = cur.u64()?;
    let spec = NetworkSpec::new(sizes, acts, seed)?;

    let mut weights = Vec::with_capacity(l + 1);
    for i in 1..spec.layer_sizes.len() {
        let (r, c) = spec.weight_shape(i);
        weights.push(cur.matrix(r, c, &format!("weight {i}"))?);
    }
    cur.finish()?;
    NetworkState::from_weights(spec, weights)
}

pub fn read_rnn_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<ElmanState<T>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    cur.header(RNN_CHECKPOINT_MAGIC)?;
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = cur.u32()? as usize;
    }
    let [d, p, t, m] = dims;
    if dims.contains(&0) {
        return Err(cur.bad(12, format!("zero size in {dims:?}")));
    }
    let at = cur.pos;
    let tag = cur.u32()?;
    let activation = ActivationKind::from_tag(tag).ok_or_else(|| cur.bad(at, format!("unknown activation tag {tag}")))?;
    let st = ElmanState {
        u: cur.matrix(d, p, "U")?,
        w: cur.matrix(d, d, "W")?,
        b: cur.matrix(1, d, "b")?,
        v: cur.matrix(1, d, "V")?,
        c: cur.matrix(m, t, "C")?,
        activation,
    };
    cur.finish()?;
    Ok(st)
}
