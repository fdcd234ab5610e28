//! MSB-first bit reader/writer shared by the parameter codec, the Huffman
//! coder, and the LZ77 token stream.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitsError {
    #[error("bitstream truncated at bit offset {bit_offset}")]
    Truncated { bit_offset: usize },
    #[error("bit width {0} exceeds 32")]
    WidthTooLarge(u32),
}

#[derive(Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    // Bits already used in the last byte, 0 meaning the last byte is full.
    used: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_bit(&mut self, bit: bool) {
        if self.used == 0 {
            self.bytes.push(0);
            self.used = 8;
        }
        self.used -= 1;
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << self.used;
        }
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        for i in (0..width).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    /// Pads with zero bits to the next byte boundary.
    pub fn align(&mut self) {
        self.used = 0;
    }

    pub fn bit_len(&self) -> usize {
        self.bytes.len() * 8 - self.used as usize
    }

    pub fn into_bytes(mut self) -> Vec<u8> {
        self.align();
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize, // absolute bit position
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn bit_pos(&self) -> usize {
        self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, BitsError> {
        let byte = self.pos / 8;
        if byte >= self.bytes.len() {
            return Err(BitsError::Truncated {
                bit_offset: self.pos,
            });
        }
        let bit = (self.bytes[byte] >> (7 - (self.pos % 8))) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u32, BitsError> {
        if width > 32 {
            return Err(BitsError::WidthTooLarge(width));
        }
        let mut value = 0u32;
        for _ in 0..width {
            value = (value << 1) | self.read_bit()? as u32;
        }
        Ok(value)
    }

    /// Skips to the next byte boundary.
    pub fn align(&mut self) {
        self.pos = (self.pos + 7) / 8 * 8;
    }

    pub fn remaining_bits(&self) -> usize {
        (self.bytes.len() * 8).saturating_sub(self.pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_msb_first() {
        let mut w = BitWriter::new();
        w.write_bit(true);
        w.write_bits(0b0110, 4);
        let bytes = w.into_bytes();
        assert_eq!(bytes, vec![0b1011_0000]);
    }

    #[test]
    fn round_trips_mixed_widths() {
        let mut w = BitWriter::new();
        let values = [(1u32, 1u32), (0b101, 3), (0xdead, 16), (0, 7), (1023, 10)];
        for &(v, n) in &values {
            w.write_bits(v, n);
        }
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for &(v, n) in &values {
            assert_eq!(r.read_bits(n).unwrap(), v);
        }
    }

    #[test]
    fn truncation_reports_bit_offset() {
        let bytes = [0xff, 0xff];
        let mut r = BitReader::new(&bytes);
        r.read_bits(16).unwrap();
        assert_eq!(
            r.read_bit(),
            Err(BitsError::Truncated { bit_offset: 16 })
        );
    }

    #[test]
    fn align_skips_to_byte_boundary() {
        let mut w = BitWriter::new();
        w.write_bits(0b11, 2);
        w.align();
        w.write_bits(0xab, 8);
        let bytes = w.into_bytes();
        assert_eq!(bytes, vec![0b1100_0000, 0xab]);

        let mut r = BitReader::new(&bytes);
        r.read_bits(2).unwrap();
        r.align();
        assert_eq!(r.read_bits(8).unwrap(), 0xab);
    }
}
