//! Face-model compression: latent banks for the precision-tolerant
//! attributes, direct quantization plus Huffman coding for the sensitive
//! ones, magnitude pruning plus FP16 for the offset network, and an LZ77
//! stage over a sectioned, checksummed container.
//!
//! Two sibling formats share the section machinery: `GFAV` stores the raw
//! avatar uncompressed (every payload stored verbatim), `GFCM` is the
//! compact transmission container. Per section the smaller of the LZ77
//! output and the raw payload is kept, so the lossless stage never grows a
//! section.

pub mod huffman;
pub mod latent;
pub mod lz77;
pub mod prune;
pub mod quant;

pub use latent::{decode_latents, fit_latents, AttributeTag, FitConfig, FitReport, LatentBank};
pub use prune::{prune_mlp, PrunedMlp};
pub use quant::{dequantize_attr, quantize_attr, QuantizedAttr};

use crate::avatar::{anchor_points, rest_width, Avatar, AvatarError, GaussianSet, OffsetNetwork};
use crate::head::BlendshapeHead;
use crate::wire::{self, Cursor, WireError};
use std::path::Path;
use thiserror::Error;

pub const GFAV_MAGIC: [u8; 4] = *b"GFAV";
pub const GFCM_MAGIC: [u8; 4] = *b"GFCM";
pub const CONTAINER_VERSION: u16 = 1;

pub const SEC_ANCHOR_CONFIG: u16 = 1;
pub const SEC_ROT_RAW: u16 = 2;
pub const SEC_SCALE_RAW: u16 = 3;
pub const SEC_OPACITY_RAW: u16 = 4;
pub const SEC_SH_BASE_RAW: u16 = 5;
pub const SEC_SH_REST_RAW: u16 = 6;
pub const SEC_MLP_DENSE: u16 = 7;
pub const SEC_META: u16 = 8;
pub const SEC_LATENT_SH_REST: u16 = 16;
pub const SEC_LATENT_ROTATION: u16 = 17;
pub const SEC_LATENT_OPACITY: u16 = 18;
pub const SEC_QUANT_SH_BASE: u16 = 19;
pub const SEC_QUANT_SCALE: u16 = 20;
pub const SEC_MLP_PRUNED: u16 = 21;

const CODEC_STORE: u16 = 0;
const CODEC_LZ77: u16 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("latent fit diverged (non-finite loss; step {step:e} too large)")]
    NonFiniteLoss { step: f64 },
    #[error("latent bank shape invalid (n = {n}, latent dim = {latent_dim})")]
    BadLatentShape { n: usize, latent_dim: usize },
    #[error("latent bank architecture does not match its descriptor")]
    LatentArchitectureMismatch,
    #[error("sparsity must be in [0, 1), got {0}")]
    BadSparsity(f32),
    #[error("pruned layer {0} is inconsistent (mask popcount != kept values)")]
    BadPrunedLayer(usize),
    #[error("attribute bit depth must be in 2..=16, got {0}")]
    BadAttrBits(u8),
    #[error("huffman table violates the Kraft equality")]
    BadHuffmanTable,
    #[error("container is bound to model hash {expected:#018x}, provided model has {got:#018x}")]
    HashMismatch { expected: u64, got: u64 },
    #[error("section {id}: crc mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    SectionCrc { id: u16, stored: u32, computed: u32 },
    #[error("section {id}: extent out of bounds (offset {offset}, len {len}, file {file_len})")]
    SectionBounds {
        id: u16,
        offset: u64,
        len: u64,
        file_len: usize,
    },
    #[error("section {id}: decompressed length {got} does not match declared {want}")]
    SectionRawLen { id: u16, got: usize, want: usize },
    #[error("duplicate section id {0}")]
    DuplicateSection(u16),
    #[error("missing required section id {0}")]
    MissingSection(u16),
    #[error("anchor sampling produced {got} points but the file stores {want}")]
    AnchorCountMismatch { got: usize, want: usize },
    #[error("packing requires sh degree >= 1, avatar has degree {0}")]
    UnsupportedShDegree(u8),
    #[error(transparent)]
    Huffman(#[from] huffman::HuffmanError),
    #[error(transparent)]
    Lz77(#[from] lz77::Lz77Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Avatar(#[from] AvatarError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Compression settings for [`pack_container`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerConfig {
    pub dim_rest: usize,
    pub dim_rotation: usize,
    pub dim_opacity: usize,
    pub attr_bits: u8,
    pub sparsity: f32,
    pub fit_iters: usize,
    pub fit_step: f64,
    pub fit_seed: u64,
}

impl Default for ContainerConfig {
    fn default() -> Self {
        Self {
            dim_rest: 1,
            dim_rotation: 4,
            dim_opacity: 1,
            attr_bits: 8,
            sparsity: 0.35,
            fit_iters: 2000,
            fit_step: 1.0,
            fit_seed: 7,
        }
    }
}

impl ContainerConfig {
    fn fit_key(&self) -> FitKey {
        FitKey {
            dims: [self.dim_rest, self.dim_rotation, self.dim_opacity],
            iters: self.fit_iters,
            step_bits: self.fit_step.to_bits(),
            seed: self.fit_seed,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(self.dim_rest as u8);
        out.push(self.dim_rotation as u8);
        out.push(self.dim_opacity as u8);
        out.push(self.attr_bits);
        wire::put_f32(&mut out, self.sparsity);
        wire::put_u32(&mut out, self.fit_iters as u32);
        wire::put_u64(&mut out, self.fit_step.to_bits());
        wire::put_u64(&mut out, self.fit_seed);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut c = Cursor::new(bytes);
        Ok(Self {
            dim_rest: c.u8("dim_rest")? as usize,
            dim_rotation: c.u8("dim_rotation")? as usize,
            dim_opacity: c.u8("dim_opacity")? as usize,
            attr_bits: c.u8("attr bits")?,
            sparsity: c.f32("sparsity")?,
            fit_iters: c.u32("fit iters")? as usize,
            fit_step: f64::from_bits(c.u64("fit step")?),
            fit_seed: c.u64("fit seed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FitKey {
    dims: [usize; 3],
    iters: usize,
    step_bits: u64,
    seed: u64,
}

/// Latent banks carried on an unpacked avatar so that re-packing with the
/// same configuration reuses them byte for byte instead of re-fitting
/// against the already reconstructed attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCache {
    rest: LatentBank,
    rotation: LatentBank,
    opacity: LatentBank,
    key: FitKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionReport {
    pub id: u16,
    pub name: &'static str,
    pub raw_len: usize,
    pub stored_len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AttrMse {
    pub sh_rest: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_base: f64,
    pub log_scales: f64,
}

#[derive(Debug, Clone)]
pub struct PackReport {
    pub sections: Vec<SectionReport>,
    pub total_bytes: usize,
    pub attr_mse: AttrMse,
}

pub fn section_name(id: u16) -> &'static str {
    match id {
        SEC_ANCHOR_CONFIG => "anchor-config",
        SEC_ROT_RAW => "rotations",
        SEC_SCALE_RAW => "log-scales",
        SEC_OPACITY_RAW => "opacity",
        SEC_SH_BASE_RAW => "sh-base",
        SEC_SH_REST_RAW => "sh-rest",
        SEC_MLP_DENSE => "offset-mlp",
        SEC_META => "meta",
        SEC_LATENT_SH_REST => "latent-sh-rest",
        SEC_LATENT_ROTATION => "latent-rotations",
        SEC_LATENT_OPACITY => "latent-opacity",
        SEC_QUANT_SH_BASE => "quant-sh-base",
        SEC_QUANT_SCALE => "quant-log-scales",
        SEC_MLP_PRUNED => "pruned-mlp",
        _ => "unknown",
    }
}

// ---------------------------------------------------------------------------
// Section container framing
// ---------------------------------------------------------------------------

struct BuiltSection {
    id: u16,
    codec: u16,
    stored: Vec<u8>,
    raw_len: usize,
}

fn build_section(id: u16, raw: Vec<u8>, compress: bool) -> BuiltSection {
    if compress {
        let packed = lz77::compress(&raw);
        if packed.len() < raw.len() {
            return BuiltSection {
                id,
                codec: CODEC_LZ77,
                raw_len: raw.len(),
                stored: packed,
            };
        }
    }
    BuiltSection {
        id,
        codec: CODEC_STORE,
        raw_len: raw.len(),
        stored: raw,
    }
}

const HEADER_LEN: usize = 4 + 2 + 2 + 8 + 2;
const ENTRY_LEN: usize = 2 + 2 + 8 + 8 + 8 + 4;

fn write_container(magic: &[u8; 4], model_hash: u64, sections: &[BuiltSection]) -> Vec<u8> {
    let table_len = sections.len() * ENTRY_LEN;
    let mut payload_offset = HEADER_LEN + table_len;
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    wire::put_u16(&mut out, CONTAINER_VERSION);
    wire::put_u16(&mut out, 0); // flags
    wire::put_u64(&mut out, model_hash);
    wire::put_u16(&mut out, sections.len() as u16);
    for s in sections {
        wire::put_u16(&mut out, s.id);
        wire::put_u16(&mut out, s.codec);
        wire::put_u64(&mut out, payload_offset as u64);
        wire::put_u64(&mut out, s.stored.len() as u64);
        wire::put_u64(&mut out, s.raw_len as u64);
        wire::put_u32(&mut out, crc32fast::hash(&s.stored));
        payload_offset += s.stored.len();
    }
    for s in sections {
        out.extend_from_slice(&s.stored);
    }
    out
}

struct ReadSection {
    raw: Vec<u8>,
    stored_len: usize,
}

fn read_container(
    bytes: &[u8],
    magic: &[u8; 4],
) -> Result<(u64, Vec<(u16, ReadSection)>), ModelError> {
    let mut c = Cursor::new(bytes);
    c.magic(magic)?;
    c.version(CONTAINER_VERSION)?;
    c.u16("flags")?;
    let model_hash = c.u64("base model hash")?;
    let count = c.u16("section count")? as usize;
    let mut sections: Vec<(u16, u16, u64, u64, u64, u32)> = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.u16("section id")?;
        let codec = c.u16("section codec")?;
        let offset = c.u64("section offset")?;
        let stored_len = c.u64("section stored length")?;
        let raw_len = c.u64("section raw length")?;
        let crc = c.u32("section crc")?;
        if sections.iter().any(|&(sid, ..)| sid == id) {
            return Err(ModelError::DuplicateSection(id));
        }
        sections.push((id, codec, offset, stored_len, raw_len, crc));
    }
    let mut out = Vec::with_capacity(count);
    for (id, codec, offset, stored_len, raw_len, crc) in sections {
        let end = offset.checked_add(stored_len);
        if end.is_none() || end.unwrap() as usize > bytes.len() {
            return Err(ModelError::SectionBounds {
                id,
                offset,
                len: stored_len,
                file_len: bytes.len(),
            });
        }
        let stored = &bytes[offset as usize..(offset + stored_len) as usize];
        let computed = crc32fast::hash(stored);
        if computed != crc {
            return Err(ModelError::SectionCrc {
                id,
                stored: crc,
                computed,
            });
        }
        let raw = match codec {
            CODEC_STORE => stored.to_vec(),
            CODEC_LZ77 => lz77::decompress(stored)?,
            other => {
                return Err(WireError::InvalidField {
                    offset: offset as usize,
                    what: "section codec",
                    detail: format!("unknown codec {other}"),
                }
                .into())
            }
        };
        if raw.len() != raw_len as usize {
            return Err(ModelError::SectionRawLen {
                id,
                got: raw.len(),
                want: raw_len as usize,
            });
        }
        out.push((
            id,
            ReadSection {
                raw,
                stored_len: stored_len as usize,
            },
        ));
    }
    Ok((model_hash, out))
}

fn take_section(
    sections: &mut Vec<(u16, ReadSection)>,
    id: u16,
) -> Result<ReadSection, ModelError> {
    let pos = sections
        .iter()
        .position(|&(sid, _)| sid == id)
        .ok_or(ModelError::MissingSection(id))?;
    Ok(sections.remove(pos).1)
}

// ---------------------------------------------------------------------------
// Section payloads
// ---------------------------------------------------------------------------

fn anchor_config_bytes(avatar: &Avatar) -> Vec<u8> {
    let mut out = Vec::new();
    wire::put_u32(&mut out, avatar.grid_target);
    wire::put_u32(&mut out, avatar.gaussians.len() as u32);
    out.push(avatar.gaussians.sh_degree);
    out.extend_from_slice(&[0, 0, 0]);
    out
}

fn parse_anchor_config(bytes: &[u8]) -> Result<(u32, usize, u8), ModelError> {
    let mut c = Cursor::new(bytes);
    let grid_target = c.u32("grid target")?;
    let count = c.u32("point count")? as usize;
    let sh_degree = c.u8("sh degree")?;
    Ok((grid_target, count, sh_degree))
}

fn mlp_dense_bytes(net: &OffsetNetwork) -> Vec<u8> {
    let mut out = Vec::new();
    wire::put_u32(&mut out, net.pe_bands);
    out.push(net.include_raw as u8);
    out.push(net.layers.len() as u8);
    wire::put_u32(&mut out, net.dim_psi as u32);
    wire::put_f32(&mut out, net.position_gain);
    wire::put_f32(&mut out, net.rotation_gain);
    wire::put_f32(&mut out, net.scale_gain);
    for l in &net.layers {
        wire::put_u32(&mut out, l.rows as u32);
        wire::put_u32(&mut out, l.cols as u32);
        wire::put_f32_slice(&mut out, &l.weights);
        wire::put_f32_slice(&mut out, &l.bias);
    }
    out
}

fn parse_mlp_dense(bytes: &[u8]) -> Result<OffsetNetwork, ModelError> {
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
        layers.push(crate::avatar::Layer {
            weights: c.f32_vec(rows * cols, "weights")?,
            rows,
            cols,
            bias: c.f32_vec(rows, "bias")?,
        });
    }
    let net = OffsetNetwork {
        layers,
        pe_bands,
        include_raw,
        dim_psi,
        position_gain,
        rotation_gain,
        scale_gain,
    };
    net.validate()?;
    Ok(net)
}

// ---------------------------------------------------------------------------
// GFAV: uncompressed avatar file
// ---------------------------------------------------------------------------

/// Serializes the avatar uncompressed: anchor configuration plus raw
/// attribute arrays and the dense offset network. Anchors themselves are
/// regenerated from the base model on load.
pub fn save_avatar(avatar: &Avatar) -> Vec<u8> {
    let g = &avatar.gaussians;
    let n = g.len();
    let mut rot = Vec::with_capacity(n * 16);
    for q in &g.rotations {
        wire::put_f32_slice(&mut rot, q);
    }
    let mut scale = Vec::with_capacity(n * 12);
    for s in &g.log_scales {
        wire::put_f32_slice(&mut scale, s);
    }
    let mut opac = Vec::with_capacity(n * 4);
    wire::put_f32_slice(&mut opac, &g.opacity_logits);
    let mut base = Vec::with_capacity(n * 12);
    for b in &g.sh_base {
        wire::put_f32_slice(&mut base, b);
    }
    let mut rest = Vec::with_capacity(g.sh_rest.len() * 4);
    wire::put_f32_slice(&mut rest, &g.sh_rest);

    let sections = vec![
        build_section(SEC_ANCHOR_CONFIG, anchor_config_bytes(avatar), false),
        build_section(SEC_ROT_RAW, rot, false),
        build_section(SEC_SCALE_RAW, scale, false),
        build_section(SEC_OPACITY_RAW, opac, false),
        build_section(SEC_SH_BASE_RAW, base, false),
        build_section(SEC_SH_REST_RAW, rest, false),
        build_section(SEC_MLP_DENSE, mlp_dense_bytes(&avatar.network), false),
    ];
    write_container(&GFAV_MAGIC, avatar.model_hash, &sections)
}

/// Loads a `GFAV` avatar against its base model; the anchor set is
/// re-sampled from the model and must match the stored point count.
pub fn load_avatar(bytes: &[u8], model: &BlendshapeHead) -> Result<Avatar, ModelError> {
    let (model_hash, mut sections) = read_container(bytes, &GFAV_MAGIC)?;
    let got = model.content_hash();
    if model_hash != got {
        return Err(ModelError::HashMismatch {
            expected: model_hash,
            got,
        });
    }
    let (grid_target, n, sh_degree) =
        parse_anchor_config(&take_section(&mut sections, SEC_ANCHOR_CONFIG)?.raw)?;
    let anchors = anchor_points(model, grid_target as usize)?;
    if anchors.len() != n {
        return Err(ModelError::AnchorCountMismatch {
            got: anchors.len(),
            want: n,
        });
    }
    let rot_raw = take_section(&mut sections, SEC_ROT_RAW)?.raw;
    let scale_raw = take_section(&mut sections, SEC_SCALE_RAW)?.raw;
    let opac_raw = take_section(&mut sections, SEC_OPACITY_RAW)?.raw;
    let base_raw = take_section(&mut sections, SEC_SH_BASE_RAW)?.raw;
    let rest_raw = take_section(&mut sections, SEC_SH_REST_RAW)?.raw;
    let mlp_raw = take_section(&mut sections, SEC_MLP_DENSE)?.raw;

    let rotations = Cursor::new(&rot_raw)
        .f32_vec(n * 4, "rotations")?
        .chunks_exact(4)
        .map(|q| [q[0], q[1], q[2], q[3]])
        .collect();
    let log_scales = Cursor::new(&scale_raw)
        .f32_vec(n * 3, "log scales")?
        .chunks_exact(3)
        .map(|s| [s[0], s[1], s[2]])
        .collect();
    let opacity_logits = Cursor::new(&opac_raw).f32_vec(n, "opacity")?;
    let sh_base = Cursor::new(&base_raw)
        .f32_vec(n * 3, "sh base")?
        .chunks_exact(3)
        .map(|b| [b[0], b[1], b[2]])
        .collect();
    let sh_rest = Cursor::new(&rest_raw).f32_vec(n * rest_width(sh_degree), "sh rest")?;

    let gaussians = GaussianSet {
        anchors,
        rotations,
        log_scales,
        opacity_logits,
        sh_base,
        sh_rest,
        sh_degree,
    };
    gaussians.validate()?;
    Ok(Avatar {
        gaussians,
        network: parse_mlp_dense(&mlp_raw)?,
        grid_target,
        model_hash,
        latent_cache: None,
    })
}

pub fn save_avatar_file(avatar: &Avatar, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, save_avatar(avatar))?;
    Ok(())
}

pub fn load_avatar_file(path: &Path, model: &BlendshapeHead) -> Result<Avatar, ModelError> {
    load_avatar(&std::fs::read(path)?, model)
}

// ---------------------------------------------------------------------------
// GFCM: compact container
// ---------------------------------------------------------------------------

fn mse(a: &[f32], b: &[f32]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

fn flatten4(v: &[[f32; 4]]) -> Vec<f32> {
    v.iter().flatten().copied().collect()
}

fn flatten3(v: &[[f32; 3]]) -> Vec<f32> {
    v.iter().flatten().copied().collect()
}

struct FittedBanks {
    rest: LatentBank,
    rotation: LatentBank,
    opacity: LatentBank,
}

fn obtain_banks(avatar: &Avatar, cfg: &ContainerConfig) -> Result<FittedBanks, ModelError> {
    let g = &avatar.gaussians;
    let n = g.len();
    let rw = g.rest_width();

    if let Some(cache) = &avatar.latent_cache {
        if cache.key == cfg.fit_key()
            && decode_latents(&cache.rest)? == g.sh_rest
            && decode_latents(&cache.rotation)? == flatten4(&g.rotations)
            && decode_latents(&cache.opacity)? == g.opacity_logits
        {
            return Ok(FittedBanks {
                rest: cache.rest.clone(),
                rotation: cache.rotation.clone(),
                opacity: cache.opacity.clone(),
            });
        }
    }

    let fit = |values: &[f32], out_dim: usize, tag: AttributeTag, d: usize, salt: u64| {
        fit_latents(
            values,
            n,
            out_dim,
            tag,
            &FitConfig {
                latent_dim: d,
                iters: cfg.fit_iters,
                step: cfg.fit_step,
                seed: cfg.fit_seed ^ salt,
            },
        )
    };
    let (rest, _) = fit(&g.sh_rest, rw, AttributeTag::ShRest, cfg.dim_rest, 0x5248)?;
    let (rotation, _) = fit(
        &flatten4(&g.rotations),
        4,
        AttributeTag::Rotation,
        cfg.dim_rotation,
        0x5254,
    )?;
    let (opacity, _) = fit(
        &g.opacity_logits,
        1,
        AttributeTag::Opacity,
        cfg.dim_opacity,
        0x4f50,
    )?;
    Ok(FittedBanks {
        rest,
        rotation,
        opacity,
    })
}

/// Builds the compact `GFCM` container: latent banks for sh-rest, rotation,
/// and opacity; quantized + Huffman-coded sh-base and log-scales; the pruned
/// FP16 offset network; everything LZ77-wrapped per section (stored verbatim
/// when compression would not shrink it).
pub fn pack_container(
    avatar: &Avatar,
    cfg: &ContainerConfig,
) -> Result<(Vec<u8>, PackReport), ModelError> {
    let g = &avatar.gaussians;
    g.validate()?;
    if g.sh_degree < 1 {
        return Err(ModelError::UnsupportedShDegree(g.sh_degree));
    }
    let banks = obtain_banks(avatar, cfg)?;

    let base_flat = flatten3(&g.sh_base);
    let scale_flat = flatten3(&g.log_scales);
    let q_base = quantize_attr(&base_flat, g.len(), 3, cfg.attr_bits)?;
    let q_scale = quantize_attr(&scale_flat, g.len(), 3, cfg.attr_bits)?;
    let pruned = prune_mlp(&avatar.network, cfg.sparsity)?;

    let attr_mse = AttrMse {
        sh_rest: mse(&decode_latents(&banks.rest)?, &g.sh_rest),
        rotation: mse(&decode_latents(&banks.rotation)?, &flatten4(&g.rotations)),
        opacity: mse(&decode_latents(&banks.opacity)?, &g.opacity_logits),
        sh_base: mse(&dequantize_attr(&q_base), &base_flat),
        log_scales: mse(&dequantize_attr(&q_scale), &scale_flat),
    };

    let sections = vec![
        build_section(SEC_ANCHOR_CONFIG, anchor_config_bytes(avatar), true),
        build_section(SEC_LATENT_SH_REST, banks.rest.to_bytes(), true),
        build_section(SEC_LATENT_ROTATION, banks.rotation.to_bytes(), true),
        build_section(SEC_LATENT_OPACITY, banks.opacity.to_bytes(), true),
        build_section(SEC_QUANT_SH_BASE, q_base.to_bytes()?, true),
        build_section(SEC_QUANT_SCALE, q_scale.to_bytes()?, true),
        build_section(SEC_MLP_PRUNED, pruned.to_bytes(), true),
        build_section(SEC_META, cfg.to_bytes(), true),
    ];
    let bytes = write_container(&GFCM_MAGIC, avatar.model_hash, &sections);
    let report = PackReport {
        sections: sections
            .iter()
            .map(|s| SectionReport {
                id: s.id,
                name: section_name(s.id),
                raw_len: s.raw_len,
                stored_len: s.stored.len(),
            })
            .collect(),
        total_bytes: bytes.len(),
        attr_mse,
    };
    Ok((bytes, report))
}

/// Reconstructs a render-ready avatar from a `GFCM` container. The provided
/// base model must match the container's binding hash; the anchor set is
/// re-sampled from it.
pub fn unpack_container(
    bytes: &[u8],
    model: &BlendshapeHead,
) -> Result<(Avatar, Vec<SectionReport>), ModelError> {
    let (model_hash, mut sections) = read_container(bytes, &GFCM_MAGIC)?;
    let got = model.content_hash();
    if model_hash != got {
        return Err(ModelError::HashMismatch {
            expected: model_hash,
            got,
        });
    }
    let reports: Vec<SectionReport> = sections
        .iter()
        .map(|(id, s)| SectionReport {
            id: *id,
            name: section_name(*id),
            raw_len: s.raw.len(),
            stored_len: s.stored_len,
        })
        .collect();

    let (grid_target, n, sh_degree) =
        parse_anchor_config(&take_section(&mut sections, SEC_ANCHOR_CONFIG)?.raw)?;
    let anchors = anchor_points(model, grid_target as usize)?;
    if anchors.len() != n {
        return Err(ModelError::AnchorCountMismatch {
            got: anchors.len(),
            want: n,
        });
    }

    let rest_bank = LatentBank::from_bytes(&take_section(&mut sections, SEC_LATENT_SH_REST)?.raw)?;
    let rot_bank = LatentBank::from_bytes(&take_section(&mut sections, SEC_LATENT_ROTATION)?.raw)?;
    let opac_bank = LatentBank::from_bytes(&take_section(&mut sections, SEC_LATENT_OPACITY)?.raw)?;
    let q_base = QuantizedAttr::from_bytes(&take_section(&mut sections, SEC_QUANT_SH_BASE)?.raw)?;
    let q_scale = QuantizedAttr::from_bytes(&take_section(&mut sections, SEC_QUANT_SCALE)?.raw)?;
    let pruned = PrunedMlp::from_bytes(&take_section(&mut sections, SEC_MLP_PRUNED)?.raw)?;
    let meta = ContainerConfig::from_bytes(&take_section(&mut sections, SEC_META)?.raw)?;

    let rw = rest_width(sh_degree);
    if rest_bank.n != n
        || rest_bank.decoder.out_dim != rw
        || rot_bank.n != n
        || rot_bank.decoder.out_dim != 4
        || opac_bank.n != n
        || opac_bank.decoder.out_dim != 1
        || q_base.n != n
        || q_scale.n != n
    {
        return Err(ModelError::LatentArchitectureMismatch);
    }

    let sh_rest = decode_latents(&rest_bank)?;
    let rotations: Vec<[f32; 4]> = decode_latents(&rot_bank)?
        .chunks_exact(4)
        .map(|q| [q[0], q[1], q[2], q[3]])
        .collect();
    let opacity_logits = decode_latents(&opac_bank)?;
    let sh_base: Vec<[f32; 3]> = dequantize_attr(&q_base)
        .chunks_exact(3)
        .map(|b| [b[0], b[1], b[2]])
        .collect();
    let log_scales: Vec<[f32; 3]> = dequantize_attr(&q_scale)
        .chunks_exact(3)
        .map(|s| [s[0], s[1], s[2]])
        .collect();

    let gaussians = GaussianSet {
        anchors,
        rotations,
        log_scales,
        opacity_logits,
        sh_base,
        sh_rest,
        sh_degree,
    };
    gaussians.validate()?;
    let network = pruned.to_network()?;
    network.validate()?;
    Ok((
        Avatar {
            gaussians,
            network,
            grid_target,
            model_hash,
            latent_cache: Some(LatentCache {
                rest: rest_bank,
                rotation: rot_bank,
                opacity: opac_bank,
                key: meta.fit_key(),
            }),
        },
        reports,
    ))
}
