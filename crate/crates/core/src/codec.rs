//! Little-endian byte cursor shared by the wire, key-file and model-file formats.

use crate::numerics::Matrix;

/// Ran out of bytes while decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Truncated {
    pub offset: usize,
    pub needed: usize,
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Truncated> {
        if self.remaining() < n {
            return Err(Truncated { offset: self.pos, needed: n });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, Truncated> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, Truncated> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, Truncated> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, Truncated> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, Truncated> {
        let bytes = self.take(n.checked_mul(8).ok_or(Truncated { offset: self.pos, needed: usize::MAX })?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// One named tensor: name length u8, ASCII name, rows u32, cols u32, row-major f64.
pub(crate) fn put_tensor(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    put_f64s(out, m.as_slice());
}

pub(crate) fn tensor_encoded_len(name: &str, m: &Matrix) -> usize {
    1 + name.len() + 8 + m.as_slice().len() * 8
}

/// Decoded tensor or the reason it could not be decoded.
pub(crate) enum TensorRead {
    Ok(String, Matrix),
    Truncated(Truncated),
    Invalid(String),
}

pub(crate) fn read_tensor(cur: &mut Cursor<'_>) -> TensorRead {
    let name = match cur.u8().and_then(|n| cur.take(n as usize)) {
        Ok(bytes) => bytes,
        Err(t) => return TensorRead::Truncated(t),
    };
    if !name.is_ascii() {
        return TensorRead::Invalid("tensor name is not ASCII".into());
    }
    let name = String::from_utf8(name.to_vec()).expect("ascii");
    let (rows, cols) = match (cur.u32(), cur.u32()) {
        (Ok(r), Ok(c)) => (r as usize, c as usize),
        (Err(t), _) | (_, Err(t)) => return TensorRead::Truncated(t),
    };
    if rows == 0 || cols == 0 {
        return TensorRead::Invalid(format!("tensor {name} has empty shape {rows}x{cols}"));
    }
    let Some(count) = rows.checked_mul(cols).filter(|c| c.checked_mul(8).is_some()) else {
        return TensorRead::Invalid(format!("tensor {name} shape {rows}x{cols} overflows"));
    };
    match cur.f64s(count) {
        Ok(data) => TensorRead::Ok(name, Matrix::from_vec(rows, cols, data).expect("checked shape")),
        Err(t) => TensorRead::Truncated(t),
    }
}
