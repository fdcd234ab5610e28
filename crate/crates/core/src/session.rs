//! End-to-end sessions: synthetic parameter sequences, encoder/decoder
//! pipelines with quality metrics against an uncompressed reference,
//! rate-distortion sweeps, a token-bucket link simulator, and the staged
//! model-compression ledger.

use crate::avatar::{compose, mesh_positions, Avatar};
use crate::head::{BlendshapeHead, FlameParams, HeadError, POSE_DIM};
use crate::math;
use crate::model::{self, prune_mlp, ContainerConfig, ModelError};
use crate::param::{self, ParamError, ParamSequence, StreamHeader};
use crate::render::{self, Camera, Image, RenderError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("dim_psi must be one of {{10, 20, 30, 40, 50}}, got {0}")]
    BadDimPsi(usize),
    #[error("sequence carries {got} expression dims, session needs {want}")]
    SequenceTooNarrow { got: usize, want: usize },
    #[error("sequence must have at least one frame")]
    EmptySequence,
    #[error("capacity must be positive, got {0}")]
    BadCapacity(f64),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Avatar(#[from] crate::avatar::AvatarError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const DIM_PSI_CHOICES: [usize; 5] = [10, 20, 30, 40, 50];

/// Per-session knobs shared by the CLI subcommands.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub dim_psi: usize,
    pub bit_depth: u8,
    pub fps: f32,
    pub intra_period: u32,
    pub render_size: u32,
    pub background: [f32; 3],
    pub camera_distance: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            dim_psi: 50,
            bit_depth: 8,
            fps: 25.0,
            intra_period: 100,
            render_size: 128,
            background: [0.5, 0.5, 0.5],
            camera_distance: 300.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if !DIM_PSI_CHOICES.contains(&self.dim_psi) {
            return Err(SessionError::BadDimPsi(self.dim_psi));
        }
        Ok(())
    }
}

/// Synthetic motion: per dimension a mixture of slow sinusoids plus
/// proportional noise, with expression amplitudes decaying by PCA index.
#[derive(Debug, Clone)]
pub struct MotionModel {
    pub components: usize,
    pub freq_range: (f64, f64),
    pub expr_amplitude: f64,
    pub expr_decay: f64,
    pub rotation_amplitude: f64,
    pub translation_amplitude: f64,
    pub blend_amplitude: f64,
    pub noise_rel: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            components: 3,
            freq_range: (0.1, 0.3),
            expr_amplitude: 2.0,
            expr_decay: 0.93,
            rotation_amplitude: 0.15,
            translation_amplitude: 8.0,
            blend_amplitude: 1.0,
            noise_rel: 0.005,
        }
    }
}

/// Deterministic smooth `(psi, theta)` trajectories at the configured fps.
pub fn generate_sequence(
    seed: u64,
    frames: usize,
    dim_psi: usize,
    fps: f32,
    motion: &MotionModel,
) -> Result<ParamSequence, SessionError> {
    if frames == 0 {
        return Err(SessionError::EmptySequence);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x736571);
    let dims = dim_psi + POSE_DIM;

    struct Dim {
        amplitude: f64,
        waves: Vec<(f64, f64, f64)>, // (weight, freq hz, phase)
        weight_sum: f64,
    }
    let mut spec = Vec::with_capacity(dims);
    for d in 0..dims {
        let amplitude = if d < dim_psi {
            motion.expr_amplitude * motion.expr_decay.powi(d as i32)
        } else {
            match d - dim_psi {
                0..=2 => motion.rotation_amplitude,
                3..=5 => motion.translation_amplitude,
                _ => motion.blend_amplitude,
            }
        };
        let mut waves = Vec::with_capacity(motion.components);
        let mut weight_sum = 0.0;
        for _ in 0..motion.components {
            let w: f64 = rng.gen_range(0.3..1.0);
            let f: f64 = rng.gen_range(motion.freq_range.0..motion.freq_range.1);
            let p: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            weight_sum += w;
            waves.push((w, f, p));
        }
        spec.push(Dim {
            amplitude,
            waves,
            weight_sum,
        });
    }

    let mut out = Vec::with_capacity(frames);
    for frame in 0..frames {
        let t = frame as f64 / fps as f64;
        let mut row = Vec::with_capacity(dims);
        for dim in &spec {
            let mut v = 0.0;
            for &(w, f, p) in &dim.waves {
                v += w * (std::f64::consts::TAU * f * t + p).sin();
            }
            v *= dim.amplitude / dim.weight_sum;
            let noise: f64 = rng.gen_range(-1.0..1.0) * motion.noise_rel * dim.amplitude;
            row.push(v + noise);
        }
        out.push(row);
    }
    Ok(ParamSequence {
        dim_psi,
        fps,
        frames: out,
    })
}

/// Camera derived from decoded pose: head rotation from the axis-angle
/// leading components applied to a fixed rig looking down +z, translation as
/// a fixed stand-off plus the pose translation block.
pub fn camera_from_pose(theta: &[f64], cfg: &SessionConfig) -> Result<Camera, SessionError> {
    let rot = math::axis_angle_to_mat([theta[0], theta[1], theta[2]]);
    let translation = [
        theta[3],
        theta[4],
        cfg.camera_distance + theta[5],
    ];
    let size = cfg.render_size;
    Ok(Camera::new(
        rot,
        translation,
        (size as f64, size as f64),
        (size as f64 / 2.0, size as f64 / 2.0),
        (size, size),
    )?)
}

fn pad_psi(psi: &[f64], width: usize) -> Vec<f64> {
    let mut out = psi.to_vec();
    out.truncate(width);
    out.resize(width, 0.0);
    out
}

/// Full drive pipeline for one frame: deform, anchor, offset, compose,
/// rasterize.
pub fn render_frame(
    model: &BlendshapeHead,
    avatar: &Avatar,
    psi: &[f64],
    theta: &[f64],
    cfg: &SessionConfig,
) -> Result<render::RenderOutput, SessionError> {
    let psi_net = pad_psi(psi, avatar.network.dim_psi);
    let params = FlameParams {
        beta: Vec::new(),
        theta: theta.to_vec(),
        psi: psi_net.clone(),
    };
    let vertices = model.deform(&params)?;
    let positions = mesh_positions(
        &avatar.gaussians.anchors,
        &model.faces,
        &vertices,
        model.vertex_count(),
    )?;
    let offsets = avatar.network.forward(&positions, &psi_net)?;
    let composed = compose(&avatar.gaussians, &positions, &offsets)?;
    let camera = camera_from_pose(theta, cfg)?;
    Ok(render::rasterize(&composed, &camera, cfg.background)?)
}

/// Encoder statistics surfaced by the CLI.
#[derive(Debug, Clone)]
pub struct EncoderStats {
    pub total_bytes: usize,
    pub frame_bytes: Vec<usize>,
    pub kbps: f64,
    pub clamped: u64,
    pub psi_bits: u64,
    pub theta_bits: u64,
    pub expression_share: f64,
}

/// Truncates expression coefficients to the session width, calibrates
/// per-dimension ranges over the sequence, and encodes the stream.
pub fn run_encoder(
    seq: &ParamSequence,
    cfg: &SessionConfig,
) -> Result<(Vec<u8>, EncoderStats), SessionError> {
    cfg.validate()?;
    if seq.frames.is_empty() {
        return Err(SessionError::EmptySequence);
    }
    if seq.dim_psi < cfg.dim_psi {
        return Err(SessionError::SequenceTooNarrow {
            got: seq.dim_psi,
            want: cfg.dim_psi,
        });
    }
    let mut rows = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let mut row = param::truncate_expression(&frame[..seq.dim_psi], cfg.dim_psi)?;
        row.extend_from_slice(&frame[seq.dim_psi..]);
        rows.push(row);
    }
    let dims = cfg.dim_psi + POSE_DIM;
    let ranges = param::compute_ranges(&rows, dims);
    let header = StreamHeader::new(cfg.dim_psi, cfg.bit_depth, seq.fps, cfg.intra_period, ranges)?;
    let (bytes, stats) = param::encode_stream(&rows, &header)?;
    let expression_share = stats.expression_share();
    Ok((
        bytes,
        EncoderStats {
            total_bytes: stats.total_bytes,
            frame_bytes: stats.frame_bytes,
            kbps: stats.kbps,
            clamped: stats.clamped,
            psi_bits: stats.psi_bits,
            theta_bits: stats.theta_bits,
            expression_share,
        },
    ))
}

/// Decoder output: rendered frames plus optional quality metrics against a
/// reference pipeline (unquantized parameters, uncompressed avatar).
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub images: Vec<Image>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Decodes a bitstream and drives the renderer. When `reference` provides
/// the original sequence and uncompressed avatar, per-frame PSNR/SSIM
/// against that pipeline are reported. `max_frames` bounds the rendered
/// prefix (0 means all frames).
pub fn run_decoder(
    stream: &[u8],
    model: &BlendshapeHead,
    avatar: &Avatar,
    reference: Option<(&ParamSequence, &Avatar)>,
    max_frames: usize,
    cfg: &SessionConfig,
) -> Result<DecodeOutcome, SessionError> {
    if avatar.model_hash != model.content_hash() {
        return Err(SessionError::Model(ModelError::HashMismatch {
            expected: avatar.model_hash,
            got: model.content_hash(),
        }));
    }
    let decoded = param::decode_stream(stream)?;
    let limit = if max_frames == 0 {
        decoded.frames.len()
    } else {
        decoded.frames.len().min(max_frames)
    };
    let mut images = Vec::with_capacity(limit);
    let mut psnr = Vec::new();
    let mut ssim = Vec::new();
    for (i, frame) in decoded.frames.iter().take(limit).enumerate() {
        let out = render_frame(model, avatar, &frame.psi, &frame.theta, cfg)?;
        if let Some((seq, ref_avatar)) = reference {
            let row = seq
                .frames
                .get(i)
                .ok_or(SessionError::SequenceTooNarrow {
                    got: seq.frames.len(),
                    want: limit,
                })?;
            let ref_out = render_frame(
                model,
                ref_avatar,
                &row[..seq.dim_psi],
                &row[seq.dim_psi..],
                cfg,
            )?;
            psnr.push(render::psnr(&out.image, &ref_out.image)?);
            ssim.push(render::ssim(&out.image, &ref_out.image)?);
        }
        images.push(out.image);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(DecodeOutcome {
        mean_psnr: mean(&psnr),
        mean_ssim: mean(&ssim),
        images,
        psnr,
        ssim,
    })
}

/// One rate-distortion operating point.
#[derive(Debug, Clone)]
pub struct RdPoint {
    pub dim_psi: usize,
    pub bit_depth: u8,
    pub kbps: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn rd_points_to_csv(points: &[RdPoint]) -> String {
    let mut out = String::from("dim_psi,bits,kbps,psnr,ssim\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.dim_psi, p.bit_depth, p.kbps, p.psnr, p.ssim
        ));
    }
    out
}

/// Sweeps (dim_psi, bit_depth) operating points: bitrate from encoding the
/// whole sequence, quality from rendering the first `render_frames` frames
/// against the unquantized, uncompressed reference.
pub fn rd_sweep(
    seq: &ParamSequence,
    model: &BlendshapeHead,
    avatar: &Avatar,
    render_avatar: &Avatar,
    dims: &[usize],
    depths: &[u8],
    render_frames: usize,
    cfg: &SessionConfig,
) -> Result<Vec<RdPoint>, SessionError> {
    let limit = render_frames.min(seq.frames.len()).max(1);
    // The reference depends only on the sequence, so render it once.
    let mut reference = Vec::with_capacity(limit);
    for row in seq.frames.iter().take(limit) {
        reference.push(
            render_frame(model, avatar, &row[..seq.dim_psi], &row[seq.dim_psi..], cfg)?.image,
        );
    }

    let mut points = Vec::with_capacity(dims.len() * depths.len());
    for &dim in dims {
        for &depth in depths {
            let point_cfg = SessionConfig {
                dim_psi: dim,
                bit_depth: depth,
                ..cfg.clone()
            };
            let (stream, stats) = run_encoder(seq, &point_cfg)?;
            let decoded = param::decode_stream(&stream)?;
            let mut psnr_acc = 0.0;
            let mut ssim_acc = 0.0;
            for (frame, ref_img) in decoded.frames.iter().zip(&reference) {
                let out = render_frame(model, render_avatar, &frame.psi, &frame.theta, &point_cfg)?;
                psnr_acc += render::psnr(&out.image, ref_img)?;
                ssim_acc += render::ssim(&out.image, ref_img)?;
            }
            points.push(RdPoint {
                dim_psi: dim,
                bit_depth: depth,
                kbps: stats.kbps,
                psnr: psnr_acc / limit as f64,
                ssim: ssim_acc / limit as f64,
            });
        }
    }
    Ok(points)
}

/// Token-bucket delivery report over per-frame payload sizes.
#[derive(Debug, Clone)]
pub struct LinkReport {
    /// Completion delay per frame in seconds: time from frame availability
    /// until its last byte drains.
    pub delays: Vec<f64>,
    pub mean_rate_kbps: f64,
    pub feasible: bool,
}

/// Serializes frames through a fixed-capacity link: frame `i` arrives at
/// `i / fps` and transmission is work-conserving and in order.
pub fn simulate_link(
    frame_bytes: &[usize],
    fps: f32,
    capacity_kbps: f64,
) -> Result<LinkReport, SessionError> {
    if !(capacity_kbps > 0.0) {
        return Err(SessionError::BadCapacity(capacity_kbps));
    }
    let rate_bits = capacity_kbps * 1000.0;
    let mut finish = 0.0f64;
    let mut delays = Vec::with_capacity(frame_bytes.len());
    for (i, &bytes) in frame_bytes.iter().enumerate() {
        let arrival = i as f64 / fps as f64;
        let start = finish.max(arrival);
        finish = start + bytes as f64 * 8.0 / rate_bits;
        delays.push(finish - arrival);
    }
    let total_bits: f64 = frame_bytes.iter().map(|&b| b as f64 * 8.0).sum();
    let duration = frame_bytes.len() as f64 / fps as f64;
    let mean_rate_kbps = total_bits / duration / 1000.0;
    Ok(LinkReport {
        delays,
        mean_rate_kbps,
        feasible: mean_rate_kbps < capacity_kbps,
    })
}

/// One row of the staged compression ledger.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub stage: &'static str,
    pub gs_bytes: usize,
    pub mlp_bytes: usize,
    pub total_bytes: usize,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Actual compact container length (framing included).
    pub container_bytes: usize,
    /// Uncompressed avatar file length.
    pub avatar_bytes: usize,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,gs_bytes,mlp_bytes,total_bytes,psnr_db\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.stage, r.gs_bytes, r.mlp_bytes, r.total_bytes, r.psnr
            ));
        }
        out
    }
}

fn mean_psnr_against(
    model: &BlendshapeHead,
    reference: &[Image],
    avatar: &Avatar,
    poses: &[(Vec<f64>, Vec<f64>)],
    cfg: &SessionConfig,
) -> Result<f64, SessionError> {
    let mut acc = 0.0;
    for (ref_img, (psi, theta)) in reference.iter().zip(poses) {
        let img = render_frame(model, avatar, psi, theta, cfg)?.image;
        acc += render::psnr(&img, ref_img)?;
    }
    Ok(acc / reference.len() as f64)
}

/// Applies the compression stages cumulatively — latent banks, network
/// pruning, quantization plus FP16, lossless wrap — measuring section sizes
/// and render quality against the uncompressed avatar after each stage.
///
/// Size columns count section payloads (GS attributes vs network); the
/// lossless stage reports the stored (possibly compressed) payload sizes
/// from the real container.
pub fn ablation_report(
    model: &BlendshapeHead,
    avatar: &Avatar,
    container_cfg: &ContainerConfig,
    cfg: &SessionConfig,
    eval_seed: u64,
    eval_frames: usize,
) -> Result<AblationTable, SessionError> {
    let g = &avatar.gaussians;
    let n = g.len();
    let rw = g.rest_width();

    // Evaluation poses and the uncompressed reference renders.
    let seq = generate_sequence(
        eval_seed,
        eval_frames.max(1),
        avatar.network.dim_psi.min(50),
        cfg.fps,
        &MotionModel::default(),
    )?;
    let poses: Vec<(Vec<f64>, Vec<f64>)> = seq
        .frames
        .iter()
        .map(|row| (row[..seq.dim_psi].to_vec(), row[seq.dim_psi..].to_vec()))
        .collect();
    let mut reference = Vec::with_capacity(poses.len());
    for (psi, theta) in &poses {
        reference.push(render_frame(model, avatar, psi, theta, cfg)?.image);
    }

    // The compact container also yields the fitted banks (via the unpack)
    // and the per-section stored sizes for the lossless stage.
    let (container, pack_report) = model::pack_container(avatar, container_cfg)?;
    let (unpacked, _) = model::unpack_container(&container, model)?;
    let gfav_len = model::save_avatar(avatar).len();

    let anchor_cfg_len = 12usize;
    let raw_rot = n * 16;
    let raw_scale = n * 12;
    let raw_opac = n * 4;
    let raw_base = n * 12;
    let raw_rest = n * rw * 4;
    let dense_mlp_len = 18 + avatar
        .network
        .layers
        .iter()
        .map(|l| 8 + (l.weights.len() + l.bias.len()) * 4)
        .sum::<usize>();

    let section_len = |id: u16| -> usize {
        pack_report
            .sections
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.raw_len)
            .unwrap_or(0)
    };
    let stored_len = |id: u16| -> usize {
        pack_report
            .sections
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.stored_len)
            .unwrap_or(0)
    };
    let latent_len = section_len(model::SEC_LATENT_SH_REST)
        + section_len(model::SEC_LATENT_ROTATION)
        + section_len(model::SEC_LATENT_OPACITY);

    // Stage 1 avatar: latent-decoded rest/rotation/opacity, everything else
    // untouched.
    let mut lr_avatar = avatar.clone();
    lr_avatar.latent_cache = None;
    lr_avatar.gaussians.sh_rest = unpacked.gaussians.sh_rest.clone();
    lr_avatar.gaussians.rotations = unpacked.gaussians.rotations.clone();
    lr_avatar.gaussians.opacity_logits = unpacked.gaussians.opacity_logits.clone();

    // Stage 2: plus pruning at full precision.
    let pruned_fp16 = prune_mlp(&avatar.network, container_cfg.sparsity)?;
    let mut masked_net = avatar.network.clone();
    {
        let dense = pruned_fp16.to_network()?;
        for (orig, sparse) in masked_net.layers.iter_mut().zip(&dense.layers) {
            for (w, &s) in orig.weights.iter_mut().zip(&sparse.weights) {
                if s == 0.0 {
                    *w = 0.0;
                }
            }
        }
    }
    let mut mp_avatar = lr_avatar.clone();
    mp_avatar.network = masked_net;
    let kept = pruned_fp16.kept_weights();
    let biases: usize = avatar.network.layers.iter().map(|l| l.bias.len()).sum();
    let masks: usize = avatar
        .network
        .layers
        .iter()
        .map(|l| (l.weights.len() + 7) / 8)
        .sum();
    let mp_mlp_len = 18 + avatar.network.layers.len() * 12 + masks + (kept + biases) * 4;

    // Stage 3: plus quantized sh-base/log-scales and FP16 network — exactly
    // the container's reconstruction.
    let qe_avatar = Avatar {
        latent_cache: None,
        ..unpacked.clone()
    };
    let q_base_len = section_len(model::SEC_QUANT_SH_BASE);
    let q_scale_len = section_len(model::SEC_QUANT_SCALE);
    let pruned_len = section_len(model::SEC_MLP_PRUNED);

    let psnr_lr = mean_psnr_against(model, &reference, &lr_avatar, &poses, cfg)?;
    let psnr_mp = mean_psnr_against(model, &reference, &mp_avatar, &poses, cfg)?;
    let psnr_qe = mean_psnr_against(model, &reference, &qe_avatar, &poses, cfg)?;

    let rows = vec![
        AblationRow {
            stage: "uncompressed",
            gs_bytes: anchor_cfg_len + raw_rot + raw_scale + raw_opac + raw_base + raw_rest,
            mlp_bytes: dense_mlp_len,
            total_bytes: 0,
            psnr: 99.0,
        },
        AblationRow {
            stage: "+latents",
            gs_bytes: anchor_cfg_len + latent_len + raw_base + raw_scale,
            mlp_bytes: dense_mlp_len,
            total_bytes: 0,
            psnr: psnr_lr,
        },
        AblationRow {
            stage: "+pruning",
            gs_bytes: anchor_cfg_len + latent_len + raw_base + raw_scale,
            mlp_bytes: mp_mlp_len,
            total_bytes: 0,
            psnr: psnr_mp,
        },
        AblationRow {
            stage: "+quant-fp16",
            gs_bytes: anchor_cfg_len + latent_len + q_base_len + q_scale_len,
            mlp_bytes: pruned_len,
            total_bytes: 0,
            psnr: psnr_qe,
        },
        AblationRow {
            stage: "+lz77",
            gs_bytes: stored_len(model::SEC_ANCHOR_CONFIG)
                + stored_len(model::SEC_LATENT_SH_REST)
                + stored_len(model::SEC_LATENT_ROTATION)
                + stored_len(model::SEC_LATENT_OPACITY)
                + stored_len(model::SEC_QUANT_SH_BASE)
                + stored_len(model::SEC_QUANT_SCALE),
            mlp_bytes: stored_len(model::SEC_MLP_PRUNED),
            // The lossless stage is exactly the quant-fp16 reconstruction.
            total_bytes: 0,
            psnr: psnr_qe,
        },
    ];
    let rows = rows
        .into_iter()
        .map(|mut r| {
            r.total_bytes = r.gs_bytes + r.mlp_bytes;
            r
        })
        .collect();
    Ok(AblationTable {
        rows,
        container_bytes: container.len(),
        avatar_bytes: gfav_len,
    })
}
