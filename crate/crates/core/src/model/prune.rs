//! One-shot global magnitude pruning of the offset network plus FP16
//! storage: a per-layer keep mask and the surviving weights as half floats.

use crate::avatar::{Layer, OffsetNetwork};
use crate::wire::{self, Cursor};
use half::f16;

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedLayer {
    pub rows: usize,
    pub cols: usize,
    /// Keep mask, one bit per weight, row-major, LSB first within a byte.
    pub mask: Vec<u8>,
    /// Kept weights in row-major order, FP16 bit patterns.
    pub values: Vec<u16>,
    /// Bias is never pruned, FP16 bit patterns.
    pub bias: Vec<u16>,
}

/// The offset network after pruning: forward behaviour is identical to the
/// dense network with masked weights read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedMlp {
    pub layers: Vec<PrunedLayer>,
    pub pe_bands: u32,
    pub include_raw: bool,
    pub dim_psi: usize,
    pub position_gain: f32,
    pub rotation_gain: f32,
    pub scale_gain: f32,
}

/// Zeroes the smallest `sparsity` fraction of weights by magnitude across
/// all layers (biases kept), ties broken by layer then index, and stores the
/// survivors as FP16.
pub fn prune_mlp(net: &OffsetNetwork, sparsity: f32) -> Result<PrunedMlp, ModelError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(ModelError::BadSparsity(sparsity));
    }
    let total: usize = net.layers.iter().map(|l| l.weights.len()).sum();
    let prune_count = (sparsity as f64 * total as f64).floor() as usize;

    let mut order: Vec<(u32, u32)> = Vec::with_capacity(total);
    for (li, layer) in net.layers.iter().enumerate() {
        for wi in 0..layer.weights.len() {
            order.push((li as u32, wi as u32));
        }
    }
    order.sort_by(|&(la, ia), &(lb, ib)| {
        let ma = net.layers[la as usize].weights[ia as usize].abs();
        let mb = net.layers[lb as usize].weights[ib as usize].abs();
        ma.partial_cmp(&mb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((la, ia).cmp(&(lb, ib)))
    });

    let mut keep: Vec<Vec<bool>> = net
        .layers
        .iter()
        .map(|l| vec![true; l.weights.len()])
        .collect();
    for &(li, wi) in order.iter().take(prune_count) {
        keep[li as usize][wi as usize] = false;
    }

    let mut layers = Vec::with_capacity(net.layers.len());
    for (layer, keep) in net.layers.iter().zip(&keep) {
        let mut mask = vec![0u8; (layer.weights.len() + 7) / 8];
        let mut values = Vec::new();
        for (wi, (&w, &k)) in layer.weights.iter().zip(keep).enumerate() {
            if k {
                mask[wi / 8] |= 1 << (wi % 8);
                values.push(f16::from_f32(w).to_bits());
            }
        }
        layers.push(PrunedLayer {
            rows: layer.rows,
            cols: layer.cols,
            mask,
            values,
            bias: layer.bias.iter().map(|&b| f16::from_f32(b).to_bits()).collect(),
        });
    }
    Ok(PrunedMlp {
        layers,
        pe_bands: net.pe_bands,
        include_raw: net.include_raw,
        dim_psi: net.dim_psi,
        position_gain: net.position_gain,
        rotation_gain: net.rotation_gain,
        scale_gain: net.scale_gain,
    })
}

impl PrunedMlp {
    pub fn kept_weights(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.rows * l.cols).sum()
    }

    /// Expands back to a dense network: masked weights are zero, kept
    /// weights are the FP16 values widened to f32.
    pub fn to_network(&self) -> Result<OffsetNetwork, ModelError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, pl) in self.layers.iter().enumerate() {
            let count = pl.rows * pl.cols;
            let popcount: usize = pl.mask.iter().map(|b| b.count_ones() as usize).sum();
            if popcount != pl.values.len() || pl.mask.len() != (count + 7) / 8 {
                return Err(ModelError::BadPrunedLayer(li));
            }
            let mut weights = vec![0.0f32; count];
            let mut vi = 0usize;
            for (wi, w) in weights.iter_mut().enumerate() {
                if pl.mask[wi / 8] >> (wi % 8) & 1 == 1 {
                    *w = f16::from_bits(pl.values[vi]).to_f32();
                    vi += 1;
                }
            }
            layers.push(Layer {
                weights,
                rows: pl.rows,
                cols: pl.cols,
                bias: pl.bias.iter().map(|&b| f16::from_bits(b).to_f32()).collect(),
            });
        }
        Ok(OffsetNetwork {
            layers,
            pe_bands: self.pe_bands,
            include_raw: self.include_raw,
            dim_psi: self.dim_psi,
            position_gain: self.position_gain,
            rotation_gain: self.rotation_gain,
            scale_gain: self.scale_gain,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u32(&mut out, self.pe_bands);
        out.push(self.include_raw as u8);
        out.push(self.layers.len() as u8);
        wire::put_u32(&mut out, self.dim_psi as u32);
        wire::put_f32(&mut out, self.position_gain);
        wire::put_f32(&mut out, self.rotation_gain);
        wire::put_f32(&mut out, self.scale_gain);
        for l in &self.layers {
            wire::put_u32(&mut out, l.rows as u32);
            wire::put_u32(&mut out, l.cols as u32);
            wire::put_u32(&mut out, l.values.len() as u32);
            out.extend_from_slice(&l.mask);
            for &v in &l.values {
                wire::put_u16(&mut out, v);
            }
            for &b in &l.bias {
                wire::put_u16(&mut out, b);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut c = Cursor::new(bytes);
        let pe_bands = c.u32("pe bands")?;
        let include_raw = c.u8("raw include flag")? != 0;
        let n_layers = c.u8("layer count")? as usize;
        let dim_psi = c.u32("dim_psi")? as usize;
        let position_gain = c.f32("position gain")?;
        let rotation_gain = c.f32("rotation gain")?;
        let scale_gain = c.f32("scale gain")?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = c.u32("rows")? as usize;
            let cols = c.u32("cols")? as usize;
            let kept = c.u32("kept count")? as usize;
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| crate::wire::WireError::InvalidField {
                    offset: c.pos(),
                    what: "layer shape",
                    detail: "rows * cols overflows".into(),
                })?;
            let mask = c.take((count + 7) / 8, "mask")?.to_vec();
            c.expect_payload(kept, 2, "kept weights")?;
            let mut values = Vec::with_capacity(kept);
            for _ in 0..kept {
                values.push(c.u16("weight")?);
            }
            c.expect_payload(rows, 2, "bias")?;
            let mut bias = Vec::with_capacity(rows);
            for _ in 0..rows {
                bias.push(c.u16("bias")?);
            }
            layers.push(PrunedLayer {
                rows,
                cols,
                mask,
                values,
                bias,
            });
        }
        Ok(Self {
            layers,
            pe_bands,
            include_raw,
            dim_psi,
            position_gain,
            rotation_gain,
            scale_gain,
        })
    }
}
