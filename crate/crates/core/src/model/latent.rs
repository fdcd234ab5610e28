//! Per-point latent codes with a shared tiny decoder, fitted by direct
//! reconstruction: gradient descent with momentum and an accepted-step rule
//! (candidate steps that raise the loss are rejected and halve the step),
//! with straight-through int8 rounding of the latents at every evaluation.

use crate::avatar::LEAKY_SLOPE;
use crate::wire::{self, Cursor, WireError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;

pub const HIDDEN: usize = 16;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeTag {
    /// Higher-order SH coefficients; decoded values pass through.
    ShRest = 0,
    /// Quaternions; decoded rows are re-normalized.
    Rotation = 1,
    /// Opacity logits; decoded values pass through (sigmoid happens at
    /// compose time).
    Opacity = 2,
}

impl AttributeTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::ShRest),
            1 => Some(Self::Rotation),
            2 => Some(Self::Opacity),
            _ => None,
        }
    }
}

/// d -> 16 -> out MLP with a leaky hidden unit, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDecoder {
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
    pub latent_dim: usize,
    pub out_dim: usize,
}

/// Quantized per-point latents plus their decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBank {
    /// `n x latent_dim` int8 codes.
    pub codes: Vec<i8>,
    /// Per-channel dequantization scale.
    pub scales: Vec<f32>,
    /// Per-channel dequantization offset (the channel minimum).
    pub offsets: Vec<f32>,
    pub decoder: LatentDecoder,
    pub tag: AttributeTag,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub latent_dim: usize,
    pub iters: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            latent_dim: 1,
            iters: 2000,
            step: 1.0,
            seed: 7,
        }
    }
}

/// Loss trace of an accepted-step run is non-increasing by construction.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Mean squared reconstruction error of the frozen bank, computed
    /// through [`decode_latents`].
    pub final_mse: f64,
    pub trace: Vec<f64>,
}

struct Workspace {
    zq: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    y: Vec<f64>,
    dh: Vec<f64>,
}

#[derive(Clone)]
struct Params {
    z: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Params {
    fn zeros_like(&self) -> Params {
        Params {
            z: vec![0.0; self.z.len()],
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    fn for_each_mut(&mut self, other: &Params, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.z.iter_mut().zip(&other.z) {
            f(a, *b);
        }
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            f(a, *b);
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            f(a, *b);
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            f(a, *b);
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            f(a, *b);
        }
    }
}

/// Straight-through quantization of the latent matrix: 256 uniform levels
/// per channel spanning the channel's current min/max.
fn quantize_latents(z: &[f64], n: usize, d: usize, zq: &mut [f64]) {
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let v = z[i * d + j];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let scale = (hi - lo) / 255.0;
        if scale == 0.0 || !scale.is_finite() {
            for i in 0..n {
                zq[i * d + j] = lo;
            }
            continue;
        }
        for i in 0..n {
            let code = ((z[i * d + j] - lo) / scale).round().clamp(0.0, 255.0);
            zq[i * d + j] = lo + code * scale;
        }
    }
}

fn forward_loss(p: &Params, targets: &[f32], n: usize, d: usize, out: usize, ws: &mut Workspace) -> f64 {
    quantize_latents(&p.z, n, d, &mut ws.zq);
    let inv = 1.0 / (n * out) as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let zi = &ws.zq[i * d..(i + 1) * d];
        for h in 0..HIDDEN {
            let row = &p.w1[h * d..(h + 1) * d];
            let mut acc = p.b1[h];
            for (w, z) in row.iter().zip(zi) {
                acc += w * z;
            }
            ws.act[h] = if acc < 0.0 { acc * LEAKY_SLOPE } else { acc };
        }
        for o in 0..out {
            let row = &p.w2[o * HIDDEN..(o + 1) * HIDDEN];
            let mut acc = p.b2[o];
            for (w, a) in row.iter().zip(ws.act.iter()) {
                acc += w * a;
            }
            let e = acc - targets[i * out + o] as f64;
            loss += e * e;
        }
    }
    loss * inv
}

fn backward(
    p: &Params,
    targets: &[f32],
    n: usize,
    d: usize,
    out: usize,
    ws: &mut Workspace,
    grad: &mut Params,
) {
    quantize_latents(&p.z, n, d, &mut ws.zq);
    grad.z.iter_mut().for_each(|g| *g = 0.0);
    grad.w1.iter_mut().for_each(|g| *g = 0.0);
    grad.b1.iter_mut().for_each(|g| *g = 0.0);
    grad.w2.iter_mut().for_each(|g| *g = 0.0);
    grad.b2.iter_mut().for_each(|g| *g = 0.0);
    let inv = 2.0 / (n * out) as f64;
    for i in 0..n {
        let zi = &ws.zq[i * d..(i + 1) * d];
        for h in 0..HIDDEN {
            let row = &p.w1[h * d..(h + 1) * d];
            let mut acc = p.b1[h];
            for (w, z) in row.iter().zip(zi) {
                acc += w * z;
            }
            ws.pre[h] = acc;
            ws.act[h] = if acc < 0.0 { acc * LEAKY_SLOPE } else { acc };
        }
        for o in 0..out {
            let row = &p.w2[o * HIDDEN..(o + 1) * HIDDEN];
            let mut acc = p.b2[o];
            for (w, a) in row.iter().zip(ws.act.iter()) {
                acc += w * a;
            }
            ws.y[o] = (acc - targets[i * out + o] as f64) * inv;
        }
        ws.dh.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..out {
            let dy = ws.y[o];
            grad.b2[o] += dy;
            let w2_row = &p.w2[o * HIDDEN..(o + 1) * HIDDEN];
            let g2_row = &mut grad.w2[o * HIDDEN..(o + 1) * HIDDEN];
            for h in 0..HIDDEN {
                g2_row[h] += dy * ws.act[h];
                ws.dh[h] += dy * w2_row[h];
            }
        }
        for h in 0..HIDDEN {
            let mut dh = ws.dh[h];
            if ws.pre[h] < 0.0 {
                dh *= LEAKY_SLOPE;
            }
            grad.b1[h] += dh;
            let w1_row = &p.w1[h * d..(h + 1) * d];
            let g1_row = &mut grad.w1[h * d..(h + 1) * d];
            let gz = &mut grad.z[i * d..(i + 1) * d];
            for j in 0..d {
                g1_row[j] += dh * zi[j];
                gz[j] += dh * w1_row[j];
            }
        }
    }
}

/// Deterministic principal-direction scores for latent initialization:
/// deflated power iteration on the centered data.
fn pca_scores(values: &[f32], n: usize, out: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7063_61);
    let mut mean = vec![0.0f64; out];
    for i in 0..n {
        for o in 0..out {
            mean[o] += values[i * out + o] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut z = vec![0.0f64; n * d];
    for j in 0..d {
        let mut v: Vec<f64> = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..50 {
            // w = X^T (X v) with previously found directions deflated.
            let mut w = vec![0.0f64; out];
            for i in 0..n {
                let mut s = 0.0;
                for o in 0..out {
                    s += (values[i * out + o] as f64 - mean[o]) * v[o];
                }
                for o in 0..out {
                    w[o] += (values[i * out + o] as f64 - mean[o]) * s;
                }
            }
            for dir in &directions {
                let dot: f64 = w.iter().zip(dir).map(|(a, b)| a * b).sum();
                for (x, dv) in w.iter_mut().zip(dir) {
                    *x -= dot * dv;
                }
            }
            let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        let mut max_abs = 0.0f64;
        for i in 0..n {
            let mut s = 0.0;
            for o in 0..out {
                s += (values[i * out + o] as f64 - mean[o]) * v[o];
            }
            z[i * d + j] = s;
            max_abs = max_abs.max(s.abs());
        }
        if max_abs > 0.0 {
            for i in 0..n {
                z[i * d + j] /= max_abs;
            }
        }
        directions.push(v);
    }
    z
}

/// Jointly fits int8 latent codes and the shared decoder to `values`
/// (`n x out_dim`, row major) by seeded gradient descent.
pub fn fit_latents(
    raw_values: &[f32],
    n: usize,
    out_dim: usize,
    tag: AttributeTag,
    cfg: &FitConfig,
) -> Result<(LatentBank, FitReport), ModelError> {
    if n == 0 || cfg.latent_dim == 0 {
        return Err(ModelError::BadLatentShape {
            n,
            latent_dim: cfg.latent_dim,
        });
    }
    assert_eq!(raw_values.len(), n * out_dim, "value matrix shape");
    let d = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Optimize against unit-RMS targets so the step size is scale free; the
    // output layer absorbs the scale when the decoder is frozen.
    let rms = (raw_values
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        / raw_values.len() as f64)
        .sqrt();
    let target_scale = if rms > 0.0 && rms.is_finite() { rms } else { 1.0 };
    let targets: Vec<f32> = raw_values
        .iter()
        .map(|&v| (v as f64 / target_scale) as f32)
        .collect();

    let mut p = Params {
        z: pca_scores(&targets, n, out_dim, d, cfg.seed),
        w1: Vec::with_capacity(HIDDEN * d),
        b1: vec![1.0; HIDDEN],
        // Zero output weights start the model at the per-channel mean; the
        // bias picks up the mean so the initial loss is the data variance.
        w2: vec![0.0; out_dim * HIDDEN],
        b2: Vec::with_capacity(out_dim),
    };
    let bound = (6.0 / (HIDDEN + d) as f64).sqrt();
    for _ in 0..HIDDEN * d {
        p.w1.push(rng.gen_range(-bound..bound));
    }
    for o in 0..out_dim {
        let mut m = 0.0;
        for i in 0..n {
            m += targets[i * out_dim + o] as f64;
        }
        p.b2.push(m / n as f64);
    }
    let values = targets.as_slice();

    let mut ws = Workspace {
        zq: vec![0.0; n * d],
        pre: vec![0.0; HIDDEN],
        act: vec![0.0; HIDDEN],
        y: vec![0.0; out_dim],
        dh: vec![0.0; HIDDEN],
    };

    let mut loss_curr = forward_loss(&p, values, n, d, out_dim, &mut ws);
    if !loss_curr.is_finite() {
        return Err(ModelError::NonFiniteLoss { step: cfg.step });
    }
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    trace.push(loss_curr);

    let mut step = cfg.step;
    let mut vel = p.zeros_like();
    let mut grad = p.zeros_like();
    let mut cand = p.clone();
    for _ in 0..cfg.iters {
        backward(&p, values, n, d, out_dim, &mut ws, &mut grad);
        vel.for_each_mut(&grad, |v, g| *v = MOMENTUM * *v - step * g);
        cand.clone_from(&p);
        cand.for_each_mut(&vel, |x, v| *x += v);
        let loss_cand = forward_loss(&cand, values, n, d, out_dim, &mut ws);
        if loss_cand.is_finite() && loss_cand <= loss_curr {
            std::mem::swap(&mut p, &mut cand);
            loss_curr = loss_cand;
        } else {
            step *= 0.5;
            if step < 1e-300 {
                return Err(ModelError::NonFiniteLoss { step });
            }
            vel.for_each_mut(&grad, |v, _| *v = 0.0);
        }
        trace.push(loss_curr);
    }

    // Freeze the quantized codes and the decoder to their stored precision.
    // The output layer re-absorbs the target normalization.
    let mut codes = vec![0i8; n * d];
    let mut scales = vec![0.0f32; d];
    let mut offsets = vec![0.0f32; d];
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let v = p.z[i * d + j];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let scale = (hi - lo) / 255.0;
        offsets[j] = lo as f32;
        scales[j] = scale as f32;
        for i in 0..n {
            let code = if scale == 0.0 {
                0.0
            } else {
                ((p.z[i * d + j] - lo) / scale).round().clamp(0.0, 255.0)
            };
            codes[i * d + j] = (code as i16 - 128) as i8;
        }
    }
    let bank = LatentBank {
        codes,
        scales,
        offsets,
        decoder: LatentDecoder {
            w1: p.w1.iter().map(|&x| x as f32).collect(),
            b1: p.b1.iter().map(|&x| x as f32).collect(),
            w2: p.w2.iter().map(|&x| (x * target_scale) as f32).collect(),
            b2: p.b2.iter().map(|&x| (x * target_scale) as f32).collect(),
            latent_dim: d,
            out_dim,
        },
        tag,
        n,
    };
    let trace = trace
        .into_iter()
        .map(|l| l * target_scale * target_scale)
        .collect();
    let decoded = decode_latents(&bank)?;
    let final_mse = decoded
        .iter()
        .zip(raw_values)
        .map(|(&a, &b)| {
            let e = a as f64 - b as f64;
            e * e
        })
        .sum::<f64>()
        / raw_values.len() as f64;
    Ok((bank, FitReport { final_mse, trace }))
}

/// Dequantizes the codes, runs the decoder, and applies the attribute output
/// map. Pure and deterministic.
pub fn decode_latents(bank: &LatentBank) -> Result<Vec<f32>, ModelError> {
    let d = bank.decoder.latent_dim;
    let out = bank.decoder.out_dim;
    if bank.codes.len() != bank.n * d
        || bank.scales.len() != d
        || bank.offsets.len() != d
        || bank.decoder.w1.len() != HIDDEN * d
        || bank.decoder.b1.len() != HIDDEN
        || bank.decoder.w2.len() != out * HIDDEN
        || bank.decoder.b2.len() != out
    {
        return Err(ModelError::LatentArchitectureMismatch);
    }
    if bank.tag == AttributeTag::Rotation && out != 4 {
        return Err(ModelError::LatentArchitectureMismatch);
    }
    let mut values = Vec::with_capacity(bank.n * out);
    let mut act = [0.0f64; HIDDEN];
    for i in 0..bank.n {
        for (h, a) in act.iter_mut().enumerate() {
            let row = &bank.decoder.w1[h * d..(h + 1) * d];
            let mut acc = bank.decoder.b1[h] as f64;
            for j in 0..d {
                let zq = bank.offsets[j] as f64
                    + (bank.codes[i * d + j] as i16 + 128) as f64 * bank.scales[j] as f64;
                acc += row[j] as f64 * zq;
            }
            *a = if acc < 0.0 { acc * LEAKY_SLOPE } else { acc };
        }
        for o in 0..out {
            let row = &bank.decoder.w2[o * HIDDEN..(o + 1) * HIDDEN];
            let mut acc = bank.decoder.b2[o] as f64;
            for (w, a) in row.iter().zip(act.iter()) {
                acc += *w as f64 * a;
            }
            values.push(acc as f32);
        }
    }
    if bank.tag == AttributeTag::Rotation {
        for q in values.chunks_exact_mut(4) {
            let norm = (q.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>()).sqrt();
            if norm > 0.0 {
                for x in q.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }
    Ok(values)
}

impl LatentBank {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(self.tag as u8);
        out.push(self.decoder.latent_dim as u8);
        wire::put_u16(&mut out, self.decoder.out_dim as u16);
        wire::put_u32(&mut out, self.n as u32);
        wire::put_f32_slice(&mut out, &self.scales);
        wire::put_f32_slice(&mut out, &self.offsets);
        out.extend(self.codes.iter().map(|&c| c as u8));
        wire::put_f32_slice(&mut out, &self.decoder.w1);
        wire::put_f32_slice(&mut out, &self.decoder.b1);
        wire::put_f32_slice(&mut out, &self.decoder.w2);
        wire::put_f32_slice(&mut out, &self.decoder.b2);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut c = Cursor::new(bytes);
        let tag = c.u8("latent tag")?;
        let tag = AttributeTag::from_u8(tag).ok_or(WireError::InvalidField {
            offset: 0,
            what: "latent tag",
            detail: format!("unknown tag {tag}"),
        })?;
        let d = c.u8("latent dim")? as usize;
        let out_dim = c.u16("output dim")? as usize;
        let n = c.u32("point count")? as usize;
        let scales = c.f32_vec(d, "latent scales")?;
        let offsets = c.f32_vec(d, "latent offsets")?;
        let codes: Vec<i8> = c.take(n * d, "latent codes")?.iter().map(|&b| b as i8).collect();
        let decoder = LatentDecoder {
            w1: c.f32_vec(HIDDEN * d, "decoder w1")?,
            b1: c.f32_vec(HIDDEN, "decoder b1")?,
            w2: c.f32_vec(out_dim * HIDDEN, "decoder w2")?,
            b2: c.f32_vec(out_dim, "decoder b2")?,
            latent_dim: d,
            out_dim,
        };
        Ok(Self {
            codes,
            scales,
            offsets,
            decoder,
            tag,
            n,
        })
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        8 + self.scales.len() * 8
            + self.codes.len()
            + (self.decoder.w1.len()
                + self.decoder.b1.len()
                + self.decoder.w2.len()
                + self.decoder.b2.len())
                * 4
    }
}
