//! Fixed-width big-endian byte encoding used for every hashed structure.

use crate::ids::ClientId;
use crate::numerics::Fixed;

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u128(&mut self, v: u128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn fixed(&mut self, v: Fixed) -> &mut Self {
        self.buf.extend_from_slice(&v.raw().to_be_bytes());
        self
    }

    pub fn id(&mut self, id: &ClientId) -> &mut Self {
        self.buf.extend_from_slice(id.as_bytes());
        self
    }

    pub fn hash(&mut self, h: &[u8; 32]) -> &mut Self {
        self.buf.extend_from_slice(h);
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn fixed_seq(&mut self, values: &[Fixed]) -> &mut Self {
        self.u64(values.len() as u64);
        for v in values {
            self.fixed(*v);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}
