//! Command-line front end for the codec pipeline: synthetic model/avatar
//! generation, parameter-stream encode/decode, model packing, rate-distortion
//! sweeps, the compression ledger, and a link simulation.
//!
//! All subcommands exit 0 on success; runtime failures print a single-line
//! JSON object on stderr and exit nonzero.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use gsface_core::head::BlendshapeHead;
use gsface_core::model::{self, ContainerConfig};
use gsface_core::param::{self, ParamSequence};
use gsface_core::session::{self, MotionModel, SessionConfig};
use gsface_core::Avatar;

#[derive(Parser)]
#[command(
    name = "gsface",
    about = "Low-bitrate talking-head codec over a Gaussian-splat avatar",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic base model and avatar.
    GenAvatar(GenAvatarArgs),
    /// Generate a synthetic facial-parameter sequence.
    GenSequence(GenSequenceArgs),
    /// Encode a parameter sequence into a bitstream.
    Encode(EncodeArgs),
    /// Decode a bitstream and render frames.
    Decode(DecodeArgs),
    /// Compress an avatar into a compact container.
    PackModel(PackArgs),
    /// Reconstruct an avatar from a compact container.
    UnpackModel(UnpackArgs),
    /// Sweep (dim_psi, bit depth) operating points into a CSV.
    RdSweep(RdSweepArgs),
    /// Produce the staged compression ledger.
    Ablate(AblateArgs),
    /// Run a fixed-capacity delivery simulation over a bitstream.
    SimulateLink(SimulateLinkArgs),
}

#[derive(Args)]
struct GenAvatarArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Vertex budget for the synthetic mesh (rounded up to a grid).
    #[arg(long, default_value_t = 2500)]
    vertices: usize,
    #[arg(long, default_value_t = 8)]
    n_beta: usize,
    #[arg(long, default_value_t = 50)]
    n_psi_max: usize,
    /// Anchor sampling target (grid is the integer square root).
    #[arg(long, default_value_t = 16384)]
    points: usize,
    #[arg(long, default_value_t = 1)]
    sh_degree: u8,
    /// Expression width of the offset network.
    #[arg(long, default_value_t = 50)]
    dim_psi: usize,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_avatar: PathBuf,
}

#[derive(Args)]
struct GenSequenceArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 250)]
    frames: usize,
    #[arg(long, default_value_t = 50)]
    dim_psi: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f32,
    /// Output path; `.csv` writes text, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Input sequence (`.csv` or binary).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 50)]
    dim_psi: usize,
    #[arg(long, default_value_t = 8)]
    bits: u8,
    #[arg(long, default_value_t = 100)]
    intra_period: u32,
    /// Frame rate assumed when the input is CSV.
    #[arg(long, default_value_t = 25.0)]
    fps: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Uncompressed avatar; also the reference for metrics.
    #[arg(long)]
    avatar: PathBuf,
    /// Render from this compact container instead of the raw avatar.
    #[arg(long)]
    container: Option<PathBuf>,
    /// Original sequence; enables PSNR/SSIM against the reference pipeline.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Per-frame metrics CSV (requires --reference).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Limit the number of rendered frames (0 = all).
    #[arg(long, default_value_t = 0)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    size: u32,
    /// Write 8-bit PNGs.
    #[arg(long, default_value_t = false)]
    png: bool,
    /// Write raw f32 planar dumps.
    #[arg(long, default_value_t = false)]
    raw: bool,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u8,
    #[arg(long, default_value_t = 0.35)]
    sparsity: f32,
    #[arg(long, default_value_t = 1)]
    dim_rest: usize,
    #[arg(long, default_value_t = 4)]
    dim_rot: usize,
    #[arg(long, default_value_t = 1)]
    dim_opacity: usize,
    #[arg(long, default_value_t = 2000)]
    fit_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    fit_step: f64,
    #[arg(long, default_value_t = 7)]
    fit_seed: u64,
    /// Per-section size report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct UnpackArgs {
    #[arg(long)]
    container: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RdSweepArgs {
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    avatar: PathBuf,
    /// Render the decoded side from this container (compressed-model curve).
    #[arg(long)]
    container: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8,10")]
    bits: Vec<u8>,
    #[arg(long, default_value_t = 8)]
    render_frames: usize,
    #[arg(long, default_value_t = 128)]
    size: u32,
    #[arg(long, default_value_t = 100)]
    intra_period: u32,
    #[arg(long)]
    out: PathBuf,
    /// Keep the per-point bitstreams in this directory.
    #[arg(long)]
    streams_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u8,
    #[arg(long, default_value_t = 0.35)]
    sparsity: f32,
    #[arg(long, default_value_t = 2000)]
    fit_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    fit_step: f64,
    #[arg(long, default_value_t = 7)]
    fit_seed: u64,
    #[arg(long, default_value_t = 128)]
    size: u32,
    #[arg(long, default_value_t = 4)]
    eval_frames: usize,
    #[arg(long, default_value_t = 17)]
    eval_seed: u64,
}

#[derive(Args)]
struct SimulateLinkArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    capacity_kbps: f64,
    /// Per-frame delay CSV; stdout summary only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        let message = format!("{err:#}");
        eprintln!(
            "{{\"error\":{{\"message\":\"{}\"}}}}",
            message.replace('\\', "\\\\").replace('"', "\\\"")
        );
        std::process::exit(1);
    }
}

fn load_sequence(path: &Path, fps: f32) -> Result<ParamSequence> {
    let name = path.to_string_lossy().into_owned();
    if name.ends_with(".csv") {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading sequence {name}"))?;
        Ok(ParamSequence::from_csv(&text, fps)?)
    } else {
        Ok(ParamSequence::load_gfpr(path)?)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenAvatar(a) => {
            let model =
                BlendshapeHead::generate_synthetic(a.seed, a.vertices, a.n_beta, a.n_psi_max)?;
            let avatar = Avatar::generate(&model, a.points, a.sh_degree, a.dim_psi, a.seed)?;
            model.save(&a.out_model)?;
            model::save_avatar_file(&avatar, &a.out_avatar)?;
            println!(
                "{{\"vertices\":{},\"faces\":{},\"points\":{},\"model_hash\":\"{:#018x}\"}}",
                model.vertex_count(),
                model.face_count(),
                avatar.gaussians.len(),
                model.content_hash()
            );
            Ok(())
        }
        Command::GenSequence(a) => {
            let seq = session::generate_sequence(
                a.seed,
                a.frames,
                a.dim_psi,
                a.fps,
                &MotionModel::default(),
            )?;
            if a.out.to_string_lossy().ends_with(".csv") {
                std::fs::write(&a.out, seq.to_csv())?;
            } else {
                seq.save_gfpr(&a.out)?;
            }
            println!(
                "{{\"frames\":{},\"dim_psi\":{},\"fps\":{}}}",
                seq.frames.len(),
                seq.dim_psi,
                seq.fps
            );
            Ok(())
        }
        Command::Encode(a) => {
            let seq = load_sequence(&a.input, a.fps)?;
            let cfg = SessionConfig {
                dim_psi: a.dim_psi,
                bit_depth: a.bits,
                intra_period: a.intra_period,
                ..Default::default()
            };
            let (bytes, stats) = session::run_encoder(&seq, &cfg)?;
            std::fs::write(&a.out, &bytes)?;
            println!(
                "{{\"frames\":{},\"bytes\":{},\"kbps\":{},\"expression_share\":{},\"clamped\":{}}}",
                seq.frames.len(),
                stats.total_bytes,
                stats.kbps,
                stats.expression_share,
                stats.clamped
            );
            Ok(())
        }
        Command::Decode(a) => {
            let model = BlendshapeHead::load(&a.model)?;
            let avatar = model::load_avatar_file(&a.avatar, &model)?;
            let render_avatar = match &a.container {
                Some(path) => {
                    let bytes = std::fs::read(path)?;
                    model::unpack_container(&bytes, &model)?.0
                }
                None => avatar.clone(),
            };
            let stream = std::fs::read(&a.stream)?;
            let cfg = SessionConfig {
                render_size: a.size,
                ..Default::default()
            };
            let reference_seq = match &a.reference {
                Some(path) => Some(load_sequence(path, cfg.fps)?),
                None => None,
            };
            let reference = reference_seq.as_ref().map(|seq| (seq, &avatar));
            let outcome =
                session::run_decoder(&stream, &model, &render_avatar, reference, a.frames, &cfg)?;
            std::fs::create_dir_all(&a.out_dir)?;
            for (i, image) in outcome.images.iter().enumerate() {
                if a.png {
                    image.write_png(&a.out_dir.join(format!("frame_{i:05}.png")))?;
                }
                if a.raw {
                    image.write_raw(&a.out_dir.join(format!("frame_{i:05}.gfim")))?;
                }
            }
            if let Some(path) = &a.metrics {
                if outcome.psnr.is_empty() {
                    bail!("--metrics requires --reference");
                }
                let mut csv = String::from("frame,psnr,ssim\n");
                for (i, (p, s)) in outcome.psnr.iter().zip(&outcome.ssim).enumerate() {
                    csv.push_str(&format!("{i},{p},{s}\n"));
                }
                std::fs::write(path, csv)?;
            }
            println!(
                "{{\"frames\":{},\"mean_psnr\":{},\"mean_ssim\":{}}}",
                outcome.images.len(),
                outcome.mean_psnr,
                outcome.mean_ssim
            );
            Ok(())
        }
        Command::PackModel(a) => {
            let model = BlendshapeHead::load(&a.model)?;
            let avatar = model::load_avatar_file(&a.avatar, &model)?;
            let cfg = ContainerConfig {
                dim_rest: a.dim_rest,
                dim_rotation: a.dim_rot,
                dim_opacity: a.dim_opacity,
                attr_bits: a.bits,
                sparsity: a.sparsity,
                fit_iters: a.fit_iters,
                fit_step: a.fit_step,
                fit_seed: a.fit_seed,
            };
            let (bytes, report) = model::pack_container(&avatar, &cfg)?;
            std::fs::write(&a.out, &bytes)?;
            let input_len = std::fs::metadata(&a.avatar)?.len();
            if let Some(path) = &a.report {
                let mut csv = String::from("section,raw_bytes,stored_bytes\n");
                for s in &report.sections {
                    csv.push_str(&format!("{},{},{}\n", s.name, s.raw_len, s.stored_len));
                }
                std::fs::write(path, csv)?;
            }
            println!(
                "{{\"container_bytes\":{},\"avatar_bytes\":{},\"ratio\":{}}}",
                report.total_bytes,
                input_len,
                report.total_bytes as f64 / input_len as f64
            );
            Ok(())
        }
        Command::UnpackModel(a) => {
            let model = BlendshapeHead::load(&a.model)?;
            let bytes = std::fs::read(&a.container)?;
            let (avatar, sections) = model::unpack_container(&bytes, &model)?;
            model::save_avatar_file(&avatar, &a.out)?;
            println!(
                "{{\"points\":{},\"sections\":{}}}",
                avatar.gaussians.len(),
                sections.len()
            );
            Ok(())
        }
        Command::RdSweep(a) => {
            let model = BlendshapeHead::load(&a.model)?;
            let avatar = model::load_avatar_file(&a.avatar, &model)?;
            let render_avatar = match &a.container {
                Some(path) => {
                    let bytes = std::fs::read(path)?;
                    model::unpack_container(&bytes, &model)?.0
                }
                None => avatar.clone(),
            };
            let seq = load_sequence(&a.sequence, 25.0)?;
            let cfg = SessionConfig {
                render_size: a.size,
                intra_period: a.intra_period,
                ..Default::default()
            };
            let points = session::rd_sweep(
                &seq,
                &model,
                &avatar,
                &render_avatar,
                &a.dims,
                &a.bits,
                a.render_frames,
                &cfg,
            )?;
            std::fs::write(&a.out, session::rd_points_to_csv(&points))?;
            if let Some(dir) = &a.streams_dir {
                std::fs::create_dir_all(dir)?;
                for &dim in &a.dims {
                    for &depth in &a.bits {
                        let point_cfg = SessionConfig {
                            dim_psi: dim,
                            bit_depth: depth,
                            ..cfg.clone()
                        };
                        let (bytes, _) = session::run_encoder(&seq, &point_cfg)?;
                        std::fs::write(dir.join(format!("dim{dim}_b{depth}.gfpc")), bytes)?;
                    }
                }
            }
            println!("{{\"points\":{}}}", points.len());
            Ok(())
        }
        Command::Ablate(a) => {
            let model = BlendshapeHead::load(&a.model)?;
            let avatar = model::load_avatar_file(&a.avatar, &model)?;
            let container_cfg = ContainerConfig {
                attr_bits: a.bits,
                sparsity: a.sparsity,
                fit_iters: a.fit_iters,
                fit_step: a.fit_step,
                fit_seed: a.fit_seed,
                ..Default::default()
            };
            let cfg = SessionConfig {
                render_size: a.size,
                ..Default::default()
            };
            let table = session::ablation_report(
                &model,
                &avatar,
                &container_cfg,
                &cfg,
                a.eval_seed,
                a.eval_frames,
            )?;
            std::fs::write(&a.out, table.to_csv())?;
            println!(
                "{{\"container_bytes\":{},\"avatar_bytes\":{},\"ratio\":{}}}",
                table.container_bytes,
                table.avatar_bytes,
                table.container_bytes as f64 / table.avatar_bytes as f64
            );
            Ok(())
        }
        Command::SimulateLink(a) => {
            let stream = std::fs::read(&a.stream)?;
            let decoded = param::decode_stream(&stream)?;
            let report =
                session::simulate_link(&decoded.frame_bytes, decoded.header.fps, a.capacity_kbps)?;
            if let Some(path) = &a.out {
                let mut csv = String::from("frame,bytes,delay_s\n");
                for (i, (&b, &d)) in decoded.frame_bytes.iter().zip(&report.delays).enumerate() {
                    csv.push_str(&format!("{i},{b},{d}\n"));
                }
                std::fs::write(path, csv)?;
            }
            let max_delay = report.delays.iter().fold(0.0f64, |a, &b| a.max(b));
            println!(
                "{{\"mean_rate_kbps\":{},\"capacity_kbps\":{},\"feasible\":{},\"max_delay_s\":{}}}",
                report.mean_rate_kbps, a.capacity_kbps, report.feasible, max_delay
            );
            Ok(())
        }
    }
}
