//! Direct per-channel quantization for the precision-sensitive attributes,
//! entropy coded with canonical Huffman tables.

use crate::bits::{BitReader, BitWriter};
use crate::wire::{self, Cursor, WireError};

use super::huffman;
use super::ModelError;

/// One quantized channel: uniform levels over `[min, max]` plus the Huffman
/// code-length table used to pack them. A constant channel stores no payload
/// at all (`bits == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedChannel {
    pub bits: u8,
    pub min: f32,
    pub max: f32,
    pub levels: Vec<u16>,
}

/// Channel-major quantized attribute matrix (`n` rows, `channels` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedAttr {
    pub n: usize,
    pub channels: Vec<QuantizedChannel>,
}

/// Quantizes each channel of an `n x channels` row-major matrix with the
/// same uniform rule as the parameter codec. `bits` must be in `2..=16`.
pub fn quantize_attr(
    values: &[f32],
    n: usize,
    channels: usize,
    bits: u8,
) -> Result<QuantizedAttr, ModelError> {
    if !(2..=16).contains(&bits) {
        return Err(ModelError::BadAttrBits(bits));
    }
    assert_eq!(values.len(), n * channels, "value matrix shape");
    let mut out = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for i in 0..n {
            let v = values[i * channels + c];
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            out.push(QuantizedChannel {
                bits: 0,
                min,
                max: min,
                levels: Vec::new(),
            });
            continue;
        }
        let mut levels = Vec::with_capacity(n);
        for i in 0..n {
            let (q, _) = crate::param::quantize(values[i * channels + c] as f64, min, max, bits);
            levels.push(q as u16);
        }
        out.push(QuantizedChannel {
            bits,
            min,
            max,
            levels,
        });
    }
    Ok(QuantizedAttr { n, channels: out })
}

/// Reconstructs the row-major matrix; constant channels come back as their
/// stored value.
pub fn dequantize_attr(attr: &QuantizedAttr) -> Vec<f32> {
    let channels = attr.channels.len();
    let mut out = vec![0.0f32; attr.n * channels];
    for (c, ch) in attr.channels.iter().enumerate() {
        if ch.bits == 0 {
            for i in 0..attr.n {
                out[i * channels + c] = ch.min;
            }
        } else {
            for i in 0..attr.n {
                out[i * channels + c] =
                    crate::param::dequantize(ch.levels[i] as u32, ch.min, ch.max, ch.bits) as f32;
            }
        }
    }
    out
}

impl QuantizedAttr {
    /// Serializes with one Huffman table per channel. Constant channels
    /// carry only their header.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        wire::put_u32(&mut out, self.n as u32);
        out.push(self.channels.len() as u8);
        for ch in &self.channels {
            out.push(ch.bits);
            wire::put_f32(&mut out, ch.min);
            wire::put_f32(&mut out, ch.max);
            if ch.bits == 0 {
                continue;
            }
            let alphabet = 1usize << ch.bits;
            let mut freqs = vec![0u64; alphabet];
            for &l in &ch.levels {
                freqs[l as usize] += 1;
            }
            let lengths = huffman::build_lengths(&freqs)?;
            out.extend_from_slice(&lengths);
            let mut w = BitWriter::new();
            huffman::encode(&ch.levels, &lengths, &mut w)?;
            let bits = w.into_bytes();
            wire::put_u32(&mut out, bits.len() as u32);
            out.extend_from_slice(&bits);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut c = Cursor::new(bytes);
        let n = c.u32("point count")? as usize;
        let channel_count = c.u8("channel count")? as usize;
        let mut channels = Vec::with_capacity(channel_count);
        for _ in 0..channel_count {
            let bits = c.u8("channel bits")?;
            let min = c.f32("channel min")?;
            let max = c.f32("channel max")?;
            if bits == 0 {
                channels.push(QuantizedChannel {
                    bits,
                    min,
                    max,
                    levels: Vec::new(),
                });
                continue;
            }
            if bits > 16 {
                return Err(ModelError::BadAttrBits(bits));
            }
            let alphabet = 1usize << bits;
            let lengths = c.take(alphabet, "huffman lengths")?.to_vec();
            // Every emitted table satisfies the Kraft equality except the
            // degenerate single-symbol table.
            let used = lengths.iter().filter(|&&l| l > 0).count();
            if used == 0 || (used > 1 && !huffman::kraft_is_exact(&lengths)) {
                return Err(ModelError::BadHuffmanTable);
            }
            let payload_len = c.u32("huffman payload length")? as usize;
            let payload = c.take(payload_len, "huffman payload")?;
            let mut r = BitReader::new(payload);
            let levels = huffman::decode(&mut r, &lengths, n)?;
            let limit = 1u32 << bits;
            if levels.iter().any(|&l| (l as u32) >= limit) {
                return Err(WireError::InvalidField {
                    offset: 0,
                    what: "quantized level",
                    detail: "level exceeds bit depth".into(),
                }
                .into());
            }
            channels.push(QuantizedChannel {
                bits,
                min,
                max,
                levels,
            });
        }
        Ok(Self { n, channels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_stores_no_payload() {
        let values = vec![3.5f32; 40];
        let attr = quantize_attr(&values, 20, 2, 8).unwrap();
        assert!(attr.channels.iter().all(|c| c.bits == 0));
        let bytes = attr.to_bytes().unwrap();
        // Header plus two channel headers only.
        assert_eq!(bytes.len(), 5 + 2 * 9);
        let back = dequantize_attr(&QuantizedAttr::from_bytes(&bytes).unwrap());
        assert_eq!(back, values);
    }

    #[test]
    fn round_trip_error_is_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 500;
        let channels = 3;
        let values: Vec<f32> = (0..n * channels).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let attr = quantize_attr(&values, n, channels, 8).unwrap();
        let back = dequantize_attr(&attr);
        for c in 0..channels {
            let ch = &attr.channels[c];
            let step = (ch.max as f64 - ch.min as f64) / 255.0;
            for i in 0..n {
                let err = (values[i * channels + c] as f64 - back[i * channels + c] as f64).abs();
                assert!(err <= step / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn sixteen_bit_error_dominated_by_eight_bit_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 400;
        let values: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let err = |bits: u8| -> f64 {
            let attr = quantize_attr(&values, n, 1, bits).unwrap();
            let back = dequantize_attr(&attr);
            values
                .iter()
                .zip(&back)
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(16) <= err(8));
    }

    #[test]
    fn serialization_round_trips_with_huffman_payload() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 700;
        let channels = 2;
        // Smooth data gives a skewed level histogram.
        let values: Vec<f32> = (0..n * channels)
            .map(|i| (i as f32 * 0.01).sin() + rng.gen_range(-0.05..0.05))
            .collect();
        let attr = quantize_attr(&values, n, channels, 8).unwrap();
        let bytes = attr.to_bytes().unwrap();
        let back = QuantizedAttr::from_bytes(&bytes).unwrap();
        assert_eq!(back, attr);
    }

    #[test]
    fn bad_bit_depths_are_rejected() {
        let values = vec![0.0f32; 4];
        assert!(matches!(
            quantize_attr(&values, 4, 1, 1),
            Err(ModelError::BadAttrBits(1))
        ));
        assert!(matches!(
            quantize_attr(&values, 4, 1, 17),
            Err(ModelError::BadAttrBits(17))
        ));
    }
}
