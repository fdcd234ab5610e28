//! Sliding-window LZ77 with a bit-packed token stream.
//!
//! Stream layout: a little-endian `u32` raw length, then tokens. Each token
//! starts with a flag bit: 0 is followed by a literal byte, 1 by a 15-bit
//! `distance - 1` and an 8-bit `length - 3`. Window 32 KiB, match lengths
//! 3..=258. Matches may overlap their own output (run-length behaviour).

use crate::bits::{BitReader, BitWriter, BitsError};
use thiserror::Error;

pub const WINDOW: usize = 32 * 1024;
pub const MIN_MATCH: usize = 3;
pub const MAX_MATCH: usize = 258;

const HASH_BITS: u32 = 15;
const HASH_SIZE: usize = 1 << HASH_BITS;
const MAX_CHAIN: usize = 96;
const NO_POS: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Lz77Error {
    #[error("token stream truncated at bit offset {bit_offset}")]
    Truncated { bit_offset: usize },
    #[error("match at output offset {offset} reaches distance {distance} beyond written output")]
    BadDistance { offset: usize, distance: usize },
    #[error("match at output offset {offset} overruns the declared raw length")]
    Overrun { offset: usize },
    #[error("missing stream header")]
    MissingHeader,
}

impl From<BitsError> for Lz77Error {
    fn from(e: BitsError) -> Self {
        match e {
            BitsError::Truncated { bit_offset } => Lz77Error::Truncated { bit_offset },
            BitsError::WidthTooLarge(_) => Lz77Error::Truncated { bit_offset: 0 },
        }
    }
}

#[inline]
fn hash3(bytes: &[u8]) -> usize {
    let v = (bytes[0] as u32) << 16 | (bytes[1] as u32) << 8 | bytes[2] as u32;
    (v.wrapping_mul(0x9E37_79B1) >> (32 - HASH_BITS)) as usize
}

/// Greedy hash-chain compressor. Deterministic: ties prefer the most recent
/// (closest) match.
pub fn compress(input: &[u8]) -> Vec<u8> {
    let mut w = BitWriter::new();
    let mut head = vec![NO_POS; HASH_SIZE];
    let mut prev = vec![NO_POS; input.len()];

    let insert = |head: &mut [u32], prev: &mut [u32], pos: usize| {
        if pos + MIN_MATCH <= input.len() {
            let h = hash3(&input[pos..]);
            prev[pos] = head[h];
            head[h] = pos as u32;
        }
    };

    let mut pos = 0usize;
    while pos < input.len() {
        let mut best_len = 0usize;
        let mut best_dist = 0usize;
        if pos + MIN_MATCH <= input.len() {
            let h = hash3(&input[pos..]);
            let mut candidate = head[h];
            let limit = (input.len() - pos).min(MAX_MATCH);
            let mut chain = 0;
            while candidate != NO_POS && chain < MAX_CHAIN {
                let cand = candidate as usize;
                let dist = pos - cand;
                if dist > WINDOW {
                    break;
                }
                let mut len = 0usize;
                while len < limit && input[cand + len] == input[pos + len] {
                    len += 1;
                }
                if len > best_len {
                    best_len = len;
                    best_dist = dist;
                    if len == limit {
                        break;
                    }
                }
                candidate = prev[cand];
                chain += 1;
            }
        }
        if best_len >= MIN_MATCH {
            w.write_bit(true);
            w.write_bits((best_dist - 1) as u32, 15);
            w.write_bits((best_len - MIN_MATCH) as u32, 8);
            for p in pos..pos + best_len {
                insert(&mut head, &mut prev, p);
            }
            pos += best_len;
        } else {
            w.write_bit(false);
            w.write_bits(input[pos] as u32, 8);
            insert(&mut head, &mut prev, pos);
            pos += 1;
        }
    }

    let mut out = Vec::with_capacity(8 + w.bit_len() / 8);
    out.extend_from_slice(&(input.len() as u32).to_le_bytes());
    out.extend_from_slice(&w.into_bytes());
    out
}

pub fn decompress(bytes: &[u8]) -> Result<Vec<u8>, Lz77Error> {
    if bytes.len() < 4 {
        return Err(Lz77Error::MissingHeader);
    }
    let raw_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let mut r = BitReader::new(&bytes[4..]);
    // Do not let a corrupt length header drive the allocation; real growth
    // is bounded by the token stream itself.
    let mut out = Vec::with_capacity(raw_len.min(1 << 24));
    while out.len() < raw_len {
        if r.read_bit()? {
            let distance = r.read_bits(15)? as usize + 1;
            let length = r.read_bits(8)? as usize + MIN_MATCH;
            if distance > out.len() {
                return Err(Lz77Error::BadDistance {
                    offset: out.len(),
                    distance,
                });
            }
            if out.len() + length > raw_len {
                return Err(Lz77Error::Overrun { offset: out.len() });
            }
            let start = out.len() - distance;
            for i in 0..length {
                let b = out[start + i];
                out.push(b);
            }
        } else {
            out.push(r.read_bits(8)? as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_input_is_header_only() {
        let c = compress(&[]);
        assert_eq!(c, vec![0, 0, 0, 0]);
        assert_eq!(decompress(&c).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn single_byte_round_trips() {
        let c = compress(b"x");
        assert_eq!(decompress(&c).unwrap(), b"x");
    }

    #[test]
    fn run_of_one_byte_compresses_to_a_few_matches() {
        let input = vec![b'a'; 10_000];
        let c = compress(&input);
        // One literal, then ceil(9999 / 258) = 39 overlapping matches:
        // 4 header bytes + ceil((9 + 39 * 24) / 8) = 123 bytes.
        assert!(c.len() < 130, "compressed to {} bytes", c.len());
        assert_eq!(decompress(&c).unwrap(), input);
    }

    #[test]
    fn random_bytes_expand_by_at_most_the_flag_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let input: Vec<u8> = (0..100_000).map(|_| rng.gen()).collect();
        let c = compress(&input);
        // All-literal worst case: 9 bits per byte plus the 4-byte header.
        assert!(c.len() <= 4 + (input.len() * 9 + 7) / 8);
        assert_eq!(decompress(&c).unwrap(), input);
    }

    #[test]
    fn structured_inputs_round_trip() {
        let mut cases: Vec<Vec<u8>> = vec![
            vec![0; 70_000],
            b"abcabcabcabcabcabc".to_vec(),
            (0..=255u8).cycle().take(100_000).collect(),
            b"aaaaab".to_vec(),
        ];
        // Period equal to the match limit boundary.
        let mut p259 = Vec::new();
        while p259.len() < 3000 {
            for i in 0..259u32 {
                p259.push((i % 256) as u8);
            }
        }
        cases.push(p259);
        for input in cases {
            let c = compress(&input);
            assert_eq!(decompress(&c).unwrap(), input);
        }
    }

    #[test]
    fn matches_beyond_window_are_not_used() {
        // Repetition spaced wider than the window must still round-trip.
        let mut input = vec![0u8; WINDOW + 512];
        for (i, b) in input.iter_mut().enumerate() {
            *b = (i % 7) as u8;
        }
        input.extend_from_slice(&input.clone()[..600]);
        let c = compress(&input);
        assert_eq!(decompress(&c).unwrap(), input);
    }

    #[test]
    fn corrupt_distance_is_detected() {
        // Hand-build a stream whose first token is a match: nothing has been
        // written yet, so any distance is invalid.
        let mut w = crate::bits::BitWriter::new();
        w.write_bit(true);
        w.write_bits(4, 15);
        w.write_bits(0, 8);
        let mut bytes = 8u32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&w.into_bytes());
        assert!(matches!(
            decompress(&bytes),
            Err(Lz77Error::BadDistance { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_stream_is_detected() {
        let c = compress(b"hello hello hello hello");
        let cut = &c[..4 + (c.len() - 4) / 2];
        match decompress(cut) {
            Err(Lz77Error::Truncated { .. }) | Err(Lz77Error::Overrun { .. }) => {}
            other => panic!("expected truncation, got {other:?}"),
        }
    }
}
