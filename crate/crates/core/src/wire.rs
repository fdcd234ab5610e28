//! Little-endian serialization cursor with byte-offset error reporting,
//! shared by the on-disk formats.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("file truncated at byte offset {offset}: expected {needed} more byte(s) for {what}")]
    Truncated {
        offset: usize,
        needed: usize,
        what: &'static str,
    },
    #[error("bad magic at byte offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    BadVersion { expected: u16, found: u16 },
    #[error("crc mismatch at byte offset {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch {
        offset: usize,
        stored: u32,
        computed: u32,
    },
    #[error("invalid field {what} at byte offset {offset}: {detail}")]
    InvalidField {
        offset: usize,
        what: &'static str,
        detail: String,
    },
}

pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
                what,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, WireError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, WireError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, WireError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, WireError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32, WireError> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32_vec(&mut self, count: usize, what: &'static str) -> Result<Vec<f32>, WireError> {
        let b = self.take(count * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Guard for count fields that drive allocations: the payload for
    /// `count` items of `item_size` bytes must still be present.
    pub fn expect_payload(
        &self,
        count: usize,
        item_size: usize,
        what: &'static str,
    ) -> Result<(), WireError> {
        let needed = count.checked_mul(item_size).unwrap_or(usize::MAX);
        if needed > self.remaining() {
            return Err(WireError::Truncated {
                offset: self.pos,
                needed: needed - self.remaining(),
                what,
            });
        }
        Ok(())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), WireError> {
        let b = self.take(4, "magic")?;
        if b != expected {
            return Err(WireError::BadMagic {
                expected: *expected,
                found: [b[0], b[1], b[2], b[3]],
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u16) -> Result<(), WireError> {
        let v = self.u16("version")?;
        if v != expected {
            return Err(WireError::BadVersion { expected, found: v });
        }
        Ok(())
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32_slice(out: &mut Vec<u8>, vs: &[f32]) {
    for &v in vs {
        put_f32(out, v);
    }
}

/// FNV-1a over a byte slice; used as the avatar-to-model binding hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_reports_truncation_offset() {
        let bytes = [1u8, 2, 3];
        let mut c = Cursor::new(&bytes);
        c.u16("a").unwrap();
        let err = c.u32("b").unwrap_err();
        match err {
            WireError::Truncated { offset, needed, .. } => {
                assert_eq!(offset, 2);
                assert_eq!(needed, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn fnv_differs_on_flip() {
        let a = fnv1a64(b"hello world");
        let mut flipped = b"hello world".to_vec();
        flipped[3] ^= 1;
        assert_ne!(a, fnv1a64(&flipped));
    }
}
