//! Canonical Huffman coder. Code lengths come from a standard two-queue-free
//! heap construction with deterministic tie breaking; codes are assigned
//! canonically (sorted by length, then symbol) so only the length table has
//! to travel.

use crate::bits::{BitReader, BitWriter, BitsError};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HuffmanError {
    #[error("alphabet has no used symbols")]
    EmptyAlphabet,
    #[error("symbol {0} is outside the alphabet of {1}")]
    SymbolOutOfRange(usize, usize),
    #[error("symbol {0} has no code (zero frequency at build time)")]
    UnusedSymbol(usize),
    #[error("corrupt stream at bit offset {bit_offset}")]
    Corrupt { bit_offset: usize },
    #[error("code length {0} exceeds the supported maximum of 63")]
    LengthOverflow(u32),
}

impl From<BitsError> for HuffmanError {
    fn from(e: BitsError) -> Self {
        match e {
            BitsError::Truncated { bit_offset } => HuffmanError::Corrupt { bit_offset },
            BitsError::WidthTooLarge(_) => HuffmanError::Corrupt { bit_offset: 0 },
        }
    }
}

/// Code length per symbol; zero marks an unused symbol. A single-symbol
/// alphabet gets length 1.
pub fn build_lengths(freqs: &[u64]) -> Result<Vec<u8>, HuffmanError> {
    let used: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
    if used.is_empty() {
        return Err(HuffmanError::EmptyAlphabet);
    }
    let mut lengths = vec![0u8; freqs.len()];
    if used.len() == 1 {
        lengths[used[0]] = 1;
        return Ok(lengths);
    }

    // Heap of (weight, creation order, node). Creation order makes merges
    // deterministic: leaves in symbol order, then internal nodes.
    struct Node {
        children: Option<(usize, usize)>,
        symbol: usize,
    }
    let mut nodes: Vec<Node> = Vec::with_capacity(used.len() * 2 - 1);
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for &s in &used {
        nodes.push(Node {
            children: None,
            symbol: s,
        });
        heap.push(Reverse((freqs[s], nodes.len() - 1)));
    }
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        nodes.push(Node {
            children: Some((a, b)),
            symbol: usize::MAX,
        });
        heap.push(Reverse((wa + wb, nodes.len() - 1)));
    }
    let root = heap.pop().unwrap().0 .1;
    let mut stack = vec![(root, 0u32)];
    while let Some((ix, depth)) = stack.pop() {
        match nodes[ix].children {
            Some((a, b)) => {
                stack.push((a, depth + 1));
                stack.push((b, depth + 1));
            }
            None => {
                if depth > 63 {
                    return Err(HuffmanError::LengthOverflow(depth));
                }
                lengths[nodes[ix].symbol] = depth.max(1) as u8;
            }
        }
    }
    Ok(lengths)
}

/// Kraft sum as an exact integer test: true iff the used lengths satisfy
/// `sum 2^-l == 1`. (A single-symbol table has sum 1/2 by construction and
/// is exempt at the call sites.)
pub fn kraft_is_exact(lengths: &[u8]) -> bool {
    let max = match lengths.iter().copied().max() {
        Some(m) if m > 0 => m as u32,
        _ => return false,
    };
    let mut sum: u128 = 0;
    for &l in lengths {
        if l > 0 {
            sum += 1u128 << (max - l as u32);
        }
    }
    sum == 1u128 << max
}

/// Canonical code per symbol as `(code, length)`, length 0 when unused.
pub fn canonical_codes(lengths: &[u8]) -> Vec<(u64, u8)> {
    let mut order: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = vec![(0u64, 0u8); lengths.len()];
    let mut code = 0u64;
    let mut prev_len = 0u8;
    for &s in &order {
        code <<= lengths[s] - prev_len;
        codes[s] = (code, lengths[s]);
        code += 1;
        prev_len = lengths[s];
    }
    codes
}

pub fn encode(symbols: &[u16], lengths: &[u8], w: &mut BitWriter) -> Result<(), HuffmanError> {
    let codes = canonical_codes(lengths);
    for &s in symbols {
        let s = s as usize;
        if s >= codes.len() {
            return Err(HuffmanError::SymbolOutOfRange(s, codes.len()));
        }
        let (code, len) = codes[s];
        if len == 0 {
            return Err(HuffmanError::UnusedSymbol(s));
        }
        for i in (0..len).rev() {
            w.write_bit((code >> i) & 1 == 1);
        }
    }
    Ok(())
}

/// Sequential canonical decoder: grows the code bit by bit and tests it
/// against the first-code table per length.
pub fn decode(
    r: &mut BitReader,
    lengths: &[u8],
    count: usize,
) -> Result<Vec<u16>, HuffmanError> {
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    if max_len == 0 {
        return Err(HuffmanError::EmptyAlphabet);
    }
    let mut sorted: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
    sorted.sort_by_key(|&s| (lengths[s], s));
    let mut count_by_len = vec![0usize; max_len as usize + 1];
    for &s in &sorted {
        count_by_len[lengths[s] as usize] += 1;
    }
    let mut first_code = vec![0u64; max_len as usize + 2];
    let mut first_index = vec![0usize; max_len as usize + 2];
    let mut code = 0u64;
    let mut index = 0usize;
    for len in 1..=max_len as usize {
        first_code[len] = code;
        first_index[len] = index;
        code = (code + count_by_len[len] as u64) << 1;
        index += count_by_len[len];
    }

    // Every symbol costs at least one bit; cap the up-front allocation so a
    // corrupt count cannot blow it up.
    let mut out = Vec::with_capacity(count.min(r.remaining_bits().max(1)));
    for _ in 0..count {
        let start = r.bit_pos();
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            code = (code << 1) | r.read_bit()? as u64;
            len += 1;
            if len > max_len as usize {
                return Err(HuffmanError::Corrupt { bit_offset: start });
            }
            let offset = code.wrapping_sub(first_code[len]);
            if count_by_len[len] > 0 && offset < count_by_len[len] as u64 {
                out.push(sorted[first_index[len] + offset as usize] as u16);
                break;
            }
        }
    }
    Ok(out)
}
