//! Little-endian binary helpers for checkpoint files.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum BlobError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unexpected end of data at byte {0}")]
    Truncated(usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Default)]
pub struct BlobWriter {
    buf: Vec<u8>,
}

impl BlobWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        Self { buf: magic.to_vec() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed (u32) byte string.
    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    /// Length-prefixed (u64) tensor stored as f32.
    pub fn f32_tensor(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct BlobReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    pub fn new(data: &'a [u8], magic: &[u8; 4]) -> Result<Self, BlobError> {
        if data.len() < 4 || &data[..4] != magic {
            return Err(BlobError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        Ok(Self { data, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BlobError> {
        let end = self.pos.checked_add(n).ok_or(BlobError::Truncated(self.pos))?;
        if end > self.data.len() {
            return Err(BlobError::Truncated(self.pos));
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, BlobError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, BlobError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, BlobError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, BlobError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], BlobError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn f32_tensor(&mut self) -> Result<Vec<f64>, BlobError> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or(BlobError::Truncated(self.pos))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    /// Read a tensor into `dst`, which must already have the right length.
    pub fn f32_tensor_into(&mut self, dst: &mut [f64], what: &str) -> Result<(), BlobError> {
        let v = self.f32_tensor()?;
        if v.len() != dst.len() {
            return Err(BlobError::Invalid(format!(
                "{what}: stored {} values, expected {}",
                v.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&v);
        Ok(())
    }

    pub fn finish(self) -> Result<(), BlobError> {
        if self.pos != self.data.len() {
            return Err(BlobError::Invalid(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
