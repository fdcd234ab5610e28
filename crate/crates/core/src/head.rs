//! Linear blendshape head model: a template mesh deformed by identity, pose,
//! and expression bases, plus a deterministic synthetic generator and the
//! `GFBM` file format.
//!
//! The synthetic generator stands in for a captured statistical head model:
//! it produces a sphere-like mesh with a full UV atlas and basis columns
//! whose norms decay geometrically, so expression truncation behaves like a
//! principal-component ordering.

use crate::wire::{self, Cursor, WireError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

pub const GFBM_MAGIC: [u8; 4] = *b"GFBM";
pub const GFBM_VERSION: u16 = 1;

/// Pose vectors are always 11-dimensional.
pub const POSE_DIM: usize = 11;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("{what} has {got} coefficients but the model supports at most {max}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        max: usize,
    },
    #[error("pose vector must have exactly {POSE_DIM} components, got {0}")]
    BadPoseLength(usize),
    #[error("vertex count {got} below minimum {min}")]
    TooFewVertices { got: usize, min: usize },
    #[error("expression basis must have at least {min} columns, got {got}")]
    ExprBasisTooNarrow { got: usize, min: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the 11 pose components are consumed: the leading components steer the
/// camera rig, the trailing ones feed the pose blendshape basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaSplit {
    pub rotation: u8,
    pub translation: u8,
    pub blend: u8,
}

impl Default for ThetaSplit {
    fn default() -> Self {
        Self {
            rotation: 3,
            translation: 3,
            blend: 5,
        }
    }
}

impl ThetaSplit {
    pub fn blend_offset(&self) -> usize {
        self.rotation as usize + self.translation as usize
    }
}

/// Identity / pose / expression coefficients driving [`BlendshapeHead::deform`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlameParams {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl FlameParams {
    pub fn zeros(n_beta: usize, dim_psi: usize) -> Self {
        Self {
            beta: vec![0.0; n_beta],
            theta: vec![0.0; POSE_DIM],
            psi: vec![0.0; dim_psi],
        }
    }
}

/// Template mesh plus shape/pose/expression displacement bases.
///
/// Basis storage is column-major: column `k` is a contiguous `V*3` block of
/// `f32`, so `deform` is a sum of scaled columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeHead {
    pub template: Vec<[f32; 3]>,
    pub shape_basis: Vec<f32>,
    pub pose_basis: Vec<f32>,
    pub expr_basis: Vec<f32>,
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[f32; 2]>,
    pub theta_split: ThetaSplit,
    n_beta: usize,
    n_pose_blend: usize,
    n_expr_max: usize,
}

impl BlendshapeHead {
    pub fn new(
        template: Vec<[f32; 3]>,
        shape_basis: Vec<f32>,
        pose_basis: Vec<f32>,
        expr_basis: Vec<f32>,
        faces: Vec<[u32; 3]>,
        uv: Vec<[f32; 2]>,
        theta_split: ThetaSplit,
    ) -> Result<Self, HeadError> {
        let v = template.len();
        if v == 0 {
            return Err(HeadError::TooFewVertices { got: 0, min: 1 });
        }
        let stride = v * 3;
        for (name, basis) in [
            ("shape", &shape_basis),
            ("pose", &pose_basis),
            ("expression", &expr_basis),
        ] {
            if basis.len() % stride != 0 {
                return Err(HeadError::Invalid(format!(
                    "{name} basis length {} is not a multiple of V*3 = {stride}",
                    basis.len()
                )));
            }
        }
        let head = Self {
            n_beta: shape_basis.len() / stride,
            n_pose_blend: pose_basis.len() / stride,
            n_expr_max: expr_basis.len() / stride,
            template,
            shape_basis,
            pose_basis,
            expr_basis,
            faces,
            uv,
            theta_split,
        };
        head.validate()?;
        Ok(head)
    }

    fn validate(&self) -> Result<(), HeadError> {
        let v = self.vertex_count() as u32;
        if self.uv.len() != self.vertex_count() {
            return Err(HeadError::Invalid(format!(
                "uv count {} != vertex count {}",
                self.uv.len(),
                self.vertex_count()
            )));
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&ix| ix >= v) {
                return Err(HeadError::Invalid(format!(
                    "face {i} references vertex out of range (V = {v})"
                )));
            }
            let [a, b, c] = [
                self.uv[f[0] as usize],
                self.uv[f[1] as usize],
                self.uv[f[2] as usize],
            ];
            let area2 = (b[0] - a[0]) as f64 * (c[1] - a[1]) as f64
                - (b[1] - a[1]) as f64 * (c[0] - a[0]) as f64;
            if area2 == 0.0 {
                return Err(HeadError::Invalid(format!(
                    "face {i} is degenerate in uv space"
                )));
            }
        }
        if self.theta_split.rotation as usize
            + self.theta_split.translation as usize
            + self.theta_split.blend as usize
            != POSE_DIM
        {
            return Err(HeadError::Invalid(
                "pose split components must sum to 11".into(),
            ));
        }
        if self.theta_split.blend as usize != self.n_pose_blend {
            return Err(HeadError::Invalid(format!(
                "pose basis has {} columns but the split feeds it {}",
                self.n_pose_blend, self.theta_split.blend
            )));
        }
        // Expression columns must be usable as a truncation ladder.
        let norms = self.expr_column_norms();
        for w in norms.windows(2) {
            if w[1] > w[0] * (1.0 + 1e-6) + 1e-12 {
                return Err(HeadError::Invalid(
                    "expression basis columns are not ordered by decreasing norm".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    pub fn n_pose_blend(&self) -> usize {
        self.n_pose_blend
    }

    pub fn n_expr_max(&self) -> usize {
        self.n_expr_max
    }

    pub fn expr_column_norms(&self) -> Vec<f64> {
        let stride = self.vertex_count() * 3;
        (0..self.n_expr_max)
            .map(|k| {
                self.expr_basis[k * stride..(k + 1) * stride]
                    .iter()
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Applies the linear model: template plus the scaled basis columns.
    /// Coefficient vectors shorter than their basis contribute zeros for the
    /// missing trailing columns; longer vectors are rejected.
    pub fn deform(&self, params: &FlameParams) -> Result<Vec<[f64; 3]>, HeadError> {
        if params.theta.len() != POSE_DIM {
            return Err(HeadError::BadPoseLength(params.theta.len()));
        }
        if params.beta.len() > self.n_beta {
            return Err(HeadError::DimensionMismatch {
                what: "identity coefficients",
                got: params.beta.len(),
                max: self.n_beta,
            });
        }
        if params.psi.len() > self.n_expr_max {
            return Err(HeadError::DimensionMismatch {
                what: "expression coefficients",
                got: params.psi.len(),
                max: self.n_expr_max,
            });
        }
        let v = self.vertex_count();
        let stride = v * 3;
        let mut out: Vec<f64> = Vec::with_capacity(stride);
        for p in &self.template {
            out.push(p[0] as f64);
            out.push(p[1] as f64);
            out.push(p[2] as f64);
        }
        let blend = &params.theta[self.theta_split.blend_offset()..];
        for (coeffs, basis) in [
            (&params.beta[..], &self.shape_basis),
            (blend, &self.pose_basis),
            (&params.psi[..], &self.expr_basis),
        ] {
            for (k, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let col = &basis[k * stride..(k + 1) * stride];
                for (o, &b) in out.iter_mut().zip(col.iter()) {
                    *o += c * b as f64;
                }
            }
        }
        Ok(out
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect())
    }

    /// Deterministic sphere-like test model with a full UV atlas.
    ///
    /// The vertex count is rounded up to the nearest `rows x cols` grid.
    /// Basis column norms decay geometrically (ratio 0.8 per column) so that
    /// expression truncation discards the least energetic directions.
    pub fn generate_synthetic(
        seed: u64,
        vertices: usize,
        n_beta: usize,
        n_expr_max: usize,
    ) -> Result<Self, HeadError> {
        if vertices < 4 {
            return Err(HeadError::TooFewVertices {
                got: vertices,
                min: 4,
            });
        }
        if n_expr_max < 50 {
            return Err(HeadError::ExprBasisTooNarrow {
                got: n_expr_max,
                min: 50,
            });
        }
        let rows = ((vertices as f64).sqrt().floor() as usize).max(2);
        let cols = (vertices + rows - 1) / rows;
        let cols = cols.max(2);
        let v = rows * cols;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius_field = SmoothField::sample(&mut rng, 3);

        const HEAD_RADIUS: f64 = 100.0; // millimetres
        let mut template = Vec::with_capacity(v);
        let mut uv = Vec::with_capacity(v);
        for i in 0..rows {
            for j in 0..cols {
                let u = j as f64 / (cols - 1) as f64;
                let w = i as f64 / (rows - 1) as f64;
                let r = HEAD_RADIUS * (1.0 + 0.08 * radius_field.eval(u, w));
                let polar = w * std::f64::consts::PI;
                let azimuth = u * std::f64::consts::TAU;
                template.push([
                    (r * polar.sin() * azimuth.cos()) as f32,
                    (r * polar.sin() * azimuth.sin()) as f32,
                    (r * polar.cos()) as f32,
                ]);
                uv.push([u as f32, w as f32]);
            }
        }

        let mut faces = Vec::with_capacity((rows - 1) * (cols - 1) * 2);
        for i in 0..rows - 1 {
            for j in 0..cols - 1 {
                let v00 = (i * cols + j) as u32;
                let v01 = v00 + 1;
                let v10 = v00 + cols as u32;
                let v11 = v10 + 1;
                faces.push([v00, v10, v11]);
                faces.push([v00, v11, v01]);
            }
        }

        let n_pose_blend = ThetaSplit::default().blend as usize;
        let shape_basis = Self::generate_basis(&mut rng, &uv, n_beta, 15.0);
        let pose_basis = Self::generate_basis(&mut rng, &uv, n_pose_blend, 5.0);
        let expr_basis = Self::generate_basis(&mut rng, &uv, n_expr_max, 8.0);

        Self::new(
            template,
            shape_basis,
            pose_basis,
            expr_basis,
            faces,
            uv,
            ThetaSplit::default(),
        )
    }

    /// Smooth displacement fields, column k scaled to norm `base * 0.8^k`.
    fn generate_basis(
        rng: &mut ChaCha8Rng,
        uv: &[[f32; 2]],
        columns: usize,
        base_norm: f64,
    ) -> Vec<f32> {
        let stride = uv.len() * 3;
        let mut out = Vec::with_capacity(columns * stride);
        for k in 0..columns {
            let fields = [
                SmoothField::sample(rng, 2),
                SmoothField::sample(rng, 2),
                SmoothField::sample(rng, 2),
            ];
            let mut col = Vec::with_capacity(stride);
            for p in uv {
                for field in &fields {
                    col.push(field.eval(p[0] as f64, p[1] as f64));
                }
            }
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            let target = base_norm * 0.8f64.powi(k as i32);
            let s = if norm > 0.0 { target / norm } else { 0.0 };
            out.extend(col.iter().map(|&x| (x * s) as f32));
        }
        out
    }

    /// FNV-1a over the serialized array payload; binds avatars and compact
    /// containers to the model they were built from.
    pub fn content_hash(&self) -> u64 {
        wire::fnv1a64(&self.payload_bytes())
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.template {
            wire::put_f32_slice(&mut out, p);
        }
        wire::put_f32_slice(&mut out, &self.shape_basis);
        wire::put_f32_slice(&mut out, &self.pose_basis);
        wire::put_f32_slice(&mut out, &self.expr_basis);
        for f in &self.faces {
            for &ix in f {
                wire::put_u32(&mut out, ix);
            }
        }
        for p in &self.uv {
            wire::put_f32_slice(&mut out, p);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&GFBM_MAGIC);
        wire::put_u16(&mut out, GFBM_VERSION);
        wire::put_u32(&mut out, self.vertex_count() as u32);
        wire::put_u32(&mut out, self.face_count() as u32);
        wire::put_u32(&mut out, self.n_beta as u32);
        wire::put_u32(&mut out, self.n_pose_blend as u32);
        wire::put_u32(&mut out, self.n_expr_max as u32);
        out.push(self.theta_split.rotation);
        out.push(self.theta_split.translation);
        out.push(self.theta_split.blend);
        out.push(0);
        wire::put_u64(&mut out, self.content_hash());
        out.extend_from_slice(&self.payload_bytes());
        let crc = crc32fast::hash(&out);
        wire::put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeadError> {
        let mut c = Cursor::new(bytes);
        c.magic(&GFBM_MAGIC)?;
        c.version(GFBM_VERSION)?;
        let v = c.u32("vertex count")? as usize;
        let f = c.u32("face count")? as usize;
        let n_beta = c.u32("shape basis width")? as usize;
        let n_pose_blend = c.u32("pose basis width")? as usize;
        let n_expr_max = c.u32("expression basis width")? as usize;
        let split = ThetaSplit {
            rotation: c.u8("split rotation")?,
            translation: c.u8("split translation")?,
            blend: c.u8("split blend")?,
        };
        c.u8("split padding")?;
        let stored_hash = c.u64("content hash")?;

        let stride = v.checked_mul(3).ok_or_else(|| {
            WireError::InvalidField {
                offset: 6,
                what: "vertex count",
                detail: "overflow".into(),
            }
        })?;
        let template_flat = c.f32_vec(stride, "template")?;
        let shape_basis = c.f32_vec(stride * n_beta, "shape basis")?;
        let pose_basis = c.f32_vec(stride * n_pose_blend, "pose basis")?;
        let expr_basis = c.f32_vec(stride * n_expr_max, "expression basis")?;
        c.expect_payload(f, 12, "faces")?;
        let mut faces = Vec::with_capacity(f);
        for _ in 0..f {
            faces.push([c.u32("face")?, c.u32("face")?, c.u32("face")?]);
        }
        let uv_flat = c.f32_vec(v * 2, "uv")?;

        let crc_offset = c.pos();
        let stored_crc = c.u32("crc32 trailer")?;
        let computed = crc32fast::hash(&bytes[..crc_offset]);
        if stored_crc != computed {
            return Err(WireError::CrcMismatch {
                offset: crc_offset,
                stored: stored_crc,
                computed,
            }
            .into());
        }

        let template: Vec<[f32; 3]> = template_flat
            .chunks_exact(3)
            .map(|p| [p[0], p[1], p[2]])
            .collect();
        let uv: Vec<[f32; 2]> = uv_flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let head = Self::new(template, shape_basis, pose_basis, expr_basis, faces, uv, split)?;
        if head.content_hash() != stored_hash {
            return Err(HeadError::Invalid(format!(
                "stored content hash {stored_hash:#018x} does not match payload"
            )));
        }
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<(), HeadError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HeadError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

/// Low-frequency sinusoid mixture over the UV square, normalized to [-1, 1].
pub(crate) struct SmoothField {
    waves: Vec<(f64, f64, f64, f64)>, // (amplitude, freq_u, freq_v, phase)
    amp_sum: f64,
}

impl SmoothField {
    pub(crate) fn sample(rng: &mut ChaCha8Rng, components: usize) -> Self {
        let mut waves = Vec::with_capacity(components);
        let mut amp_sum = 0.0;
        for _ in 0..components {
            let amp: f64 = rng.gen_range(0.3..1.0);
            let fu: f64 = rng.gen_range(0.5..3.0);
            let fv: f64 = rng.gen_range(0.5..3.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            amp_sum += amp;
            waves.push((amp, fu, fv, phase));
        }
        Self { waves, amp_sum }
    }

    pub(crate) fn eval(&self, u: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        for &(a, fu, fv, phase) in &self.waves {
            acc += a * (std::f64::consts::TAU * (fu * u + fv * v) + phase).sin();
        }
        acc / self.amp_sum
    }
}
