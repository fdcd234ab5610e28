//! Shared fixtures for the criterion benchmarks.

use gsface_core::head::BlendshapeHead;
use gsface_core::param::ParamSequence;
use gsface_core::session::{generate_sequence, MotionModel, SessionConfig};
use gsface_core::Avatar;

pub fn bench_model_and_avatar(points: usize) -> (BlendshapeHead, Avatar) {
    let model = BlendshapeHead::generate_synthetic(42, 900, 8, 50).unwrap();
    let avatar = Avatar::generate(&model, points, 1, 50, 42).unwrap();
    (model, avatar)
}

pub fn bench_sequence(frames: usize) -> ParamSequence {
    generate_sequence(42, frames, 50, 25.0, &MotionModel::default()).unwrap()
}

pub fn bench_session_config(render_size: u32) -> SessionConfig {
    SessionConfig {
        render_size,
        ..Default::default()
    }
}

/// Byte soup with both repetitive and incompressible stretches.
pub fn bench_bytes(len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut state = 0x243f_6a88u32;
    while out.len() < len {
        // A compressible run followed by pseudo-random filler.
        for i in 0..64u32 {
            out.push((i % 7) as u8);
        }
        for _ in 0..64 {
            state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            out.push((state >> 24) as u8);
        }
    }
    out.truncate(len);
    out
}
