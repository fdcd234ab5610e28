//! Gaussian avatar: a fixed point set anchored on the head mesh by UV
//! sampling, per-point splat attributes, and the expression-conditioned
//! offset network that perturbs position/rotation/scale per frame.

use crate::head::BlendshapeHead;
use crate::math::{self, Quat, Vec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AvatarError {
    #[error("anchor grid target must be at least 1")]
    EmptyGrid,
    #[error("uv atlas yielded no anchors")]
    EmptyAtlas,
    #[error("vertex array has {got} entries, model expects {want}")]
    VertexCountMismatch { got: usize, want: usize },
    #[error("anchor {index} references face {face} out of range ({faces} faces)")]
    FaceOutOfRange {
        index: usize,
        face: u32,
        faces: usize,
    },
    #[error("expression vector has {got} coefficients, network expects at most {max}")]
    ExpressionTooLong { got: usize, max: usize },
    #[error("offset network layer {0} does not chain: {1}")]
    BadArchitecture(usize, String),
    #[error("composed rotation {0} is degenerate (norm below 1e-8)")]
    DegenerateRotation(usize),
    #[error("attribute arrays disagree on point count")]
    CountMismatch,
}

/// A point bound to the mesh surface: a face index plus barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub face: u32,
    pub bary: [f32; 3],
}

/// Fixed per-point splat attributes. The point count is set at construction
/// and never changes; per-frame variation comes exclusively from the offset
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub anchors: Vec<Anchor>,
    /// Unit quaternions `[w, x, y, z]`.
    pub rotations: Vec<[f32; 4]>,
    /// Log-domain scales; the rendered scale is `exp(s)`.
    pub log_scales: Vec<[f32; 3]>,
    /// Pre-sigmoid opacity logits.
    pub opacity_logits: Vec<f32>,
    /// Degree-0 spherical-harmonics coefficients per color channel.
    pub sh_base: Vec<[f32; 3]>,
    /// Higher-order coefficients, `rest_width()` floats per point, laid out
    /// basis-major: `[basis1_rgb, basis2_rgb, ...]`.
    pub sh_rest: Vec<f32>,
    pub sh_degree: u8,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Floats per point in `sh_rest`.
    pub fn rest_width(&self) -> usize {
        rest_width(self.sh_degree)
    }

    pub fn validate(&self) -> Result<(), AvatarError> {
        let n = self.anchors.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_base.len() != n
            || self.sh_rest.len() != n * self.rest_width()
        {
            return Err(AvatarError::CountMismatch);
        }
        Ok(())
    }
}

pub fn rest_width(sh_degree: u8) -> usize {
    let bases = (sh_degree as usize + 1) * (sh_degree as usize + 1);
    3 * (bases - 1)
}

/// Samples a regular `G x G` grid of cell centers over the UV square and
/// keeps the cells that land inside a triangle. `G` is the integer square
/// root of `n_target`, so the kept count never exceeds `n_target`.
///
/// Sampling is deterministic given the model and target; on a full atlas
/// every cell is kept. Points on shared edges resolve to the lowest face
/// index.
pub fn anchor_points(model: &BlendshapeHead, n_target: usize) -> Result<Vec<Anchor>, AvatarError> {
    if n_target == 0 {
        return Err(AvatarError::EmptyGrid);
    }
    let grid = (n_target as f64).sqrt().floor() as usize;
    let grid = grid.max(1);

    // Coarse spatial index: bucket faces by the UV cells their bounding box
    // overlaps, so lookup is not O(faces) per sample.
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); grid * grid];
    for (fi, face) in model.faces.iter().enumerate() {
        let tri = [
            model.uv[face[0] as usize],
            model.uv[face[1] as usize],
            model.uv[face[2] as usize],
        ];
        let min_u = tri.iter().map(|p| p[0]).fold(f32::INFINITY, f32::min);
        let max_u = tri.iter().map(|p| p[0]).fold(f32::NEG_INFINITY, f32::max);
        let min_v = tri.iter().map(|p| p[1]).fold(f32::INFINITY, f32::min);
        let max_v = tri.iter().map(|p| p[1]).fold(f32::NEG_INFINITY, f32::max);
        let lo_u = ((min_u as f64 * grid as f64).floor() as isize).clamp(0, grid as isize - 1);
        let hi_u = ((max_u as f64 * grid as f64).floor() as isize).clamp(0, grid as isize - 1);
        let lo_v = ((min_v as f64 * grid as f64).floor() as isize).clamp(0, grid as isize - 1);
        let hi_v = ((max_v as f64 * grid as f64).floor() as isize).clamp(0, grid as isize - 1);
        for gv in lo_v..=hi_v {
            for gu in lo_u..=hi_u {
                buckets[gv as usize * grid + gu as usize].push(fi as u32);
            }
        }
    }

    let mut anchors = Vec::new();
    for gv in 0..grid {
        for gu in 0..grid {
            let u = (gu as f64 + 0.5) / grid as f64;
            let v = (gv as f64 + 0.5) / grid as f64;
            let mut hit: Option<Anchor> = None;
            for &fi in &buckets[gv * grid + gu] {
                if let Some(bary) = barycentric_in_triangle(model, fi, u, v) {
                    match hit {
                        Some(a) if a.face <= fi => {}
                        _ => hit = Some(Anchor { face: fi, bary }),
                    }
                }
            }
            if let Some(a) = hit {
                anchors.push(a);
            }
        }
    }
    if anchors.is_empty() {
        return Err(AvatarError::EmptyAtlas);
    }
    Ok(anchors)
}

/// Barycentric coordinates of `(u, v)` in face `fi`, or `None` if outside.
fn barycentric_in_triangle(
    model: &BlendshapeHead,
    fi: u32,
    u: f64,
    v: f64,
) -> Option<[f32; 3]> {
    let face = model.faces[fi as usize];
    let a = model.uv[face[0] as usize];
    let b = model.uv[face[1] as usize];
    let c = model.uv[face[2] as usize];
    let (ax, ay) = (a[0] as f64, a[1] as f64);
    let (bx, by) = (b[0] as f64, b[1] as f64);
    let (cx, cy) = (c[0] as f64, c[1] as f64);
    let det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    if det == 0.0 {
        return None;
    }
    let w1 = ((u - ax) * (cy - ay) - (v - ay) * (cx - ax)) / det;
    let w2 = ((bx - ax) * (v - ay) - (by - ay) * (u - ax)) / det;
    let w0 = 1.0 - w1 - w2;
    let eps = -1e-12;
    if w0 >= eps && w1 >= eps && w2 >= eps {
        Some([w0 as f32, w1 as f32, w2 as f32])
    } else {
        None
    }
}

/// Interpolates anchor positions from deformed vertices:
/// `mu[i] = sum_j w_ij * vertices[face_i[j]]`.
pub fn mesh_positions(
    anchors: &[Anchor],
    faces: &[[u32; 3]],
    vertices: &[[f64; 3]],
    expected_vertices: usize,
) -> Result<Vec<Vec3>, AvatarError> {
    if vertices.len() != expected_vertices {
        return Err(AvatarError::VertexCountMismatch {
            got: vertices.len(),
            want: expected_vertices,
        });
    }
    let mut out = Vec::with_capacity(anchors.len());
    for (i, a) in anchors.iter().enumerate() {
        let face = *faces.get(a.face as usize).ok_or(AvatarError::FaceOutOfRange {
            index: i,
            face: a.face,
            faces: faces.len(),
        })?;
        let mut p = [0.0f64; 3];
        for j in 0..3 {
            let v = vertices[face[j] as usize];
            let w = a.bary[j] as f64;
            p[0] += w * v[0];
            p[1] += w * v[1];
            p[2] += w * v[2];
        }
        out.push(p);
    }
    Ok(out)
}

/// Sinusoidal positional encoding: for each band `l` in `0..bands`,
/// `sin(2^l * pi * x)` then `cos(2^l * pi * x)` per coordinate, preceded by
/// the raw coordinates when `include_raw` is set.
pub fn positional_encoding(x: Vec3, bands: u32, include_raw: bool, out: &mut Vec<f64>) {
    out.clear();
    if include_raw {
        out.extend_from_slice(&x);
    }
    for l in 0..bands {
        let f = (1u64 << l) as f64 * std::f64::consts::PI;
        for &c in &x {
            out.push((f * c).sin());
        }
        for &c in &x {
            out.push((f * c).cos());
        }
    }
}

pub fn encoding_dim(bands: u32, include_raw: bool) -> usize {
    6 * bands as usize + if include_raw { 3 } else { 0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major `rows x cols` weight matrix.
    pub weights: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub bias: Vec<f32>,
}

impl Layer {
    fn forward(&self, input: &[f64], output: &mut Vec<f64>) {
        output.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r] as f64;
            for (w, x) in row.iter().zip(input.iter()) {
                acc += *w as f64 * x;
            }
            output.push(acc);
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// Offsets applied by [`compose`]: per-point position, rotation, and
/// log-scale deltas.
pub struct SpatialOffsets {
    pub position: Vec<Vec3>,
    pub rotation: Vec<Quat>,
    pub log_scale: Vec<Vec3>,
}

/// MLP mapping (encoded anchor position, expression vector) to per-point
/// spatial offsets. Hidden layers use a leaky linear unit; the 10 outputs
/// split into position (3), rotation (4), and log-scale (3) branches, each
/// scaled by a fixed constant so untrained networks stay near the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetNetwork {
    pub layers: Vec<Layer>,
    pub pe_bands: u32,
    pub include_raw: bool,
    pub dim_psi: usize,
    pub position_gain: f32,
    pub rotation_gain: f32,
    pub scale_gain: f32,
}

pub const OFFSET_OUTPUT_DIM: usize = 10;

impl OffsetNetwork {
    pub fn input_dim(&self) -> usize {
        encoding_dim(self.pe_bands, self.include_raw) + self.dim_psi
    }

    pub fn validate(&self) -> Result<(), AvatarError> {
        let mut dim = self.input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.cols != dim {
                return Err(AvatarError::BadArchitecture(
                    i,
                    format!("expected {dim} inputs, layer takes {}", layer.cols),
                ));
            }
            if layer.weights.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(AvatarError::BadArchitecture(i, "shape mismatch".into()));
            }
            dim = layer.rows;
        }
        if dim != OFFSET_OUTPUT_DIM {
            return Err(AvatarError::BadArchitecture(
                self.layers.len(),
                format!("network ends with {dim} outputs, expected {OFFSET_OUTPUT_DIM}"),
            ));
        }
        Ok(())
    }

    /// Xavier-initialized network with 3 hidden layers of `hidden` units.
    pub fn generate(seed: u64, dim_psi: usize, hidden: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pe_bands = 10;
        let include_raw = true;
        let dims = [
            encoding_dim(pe_bands, include_raw) + dim_psi,
            hidden,
            hidden,
            hidden,
            OFFSET_OUTPUT_DIM,
        ];
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let weights = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound) as f32)
                .collect();
            layers.push(Layer {
                weights,
                rows,
                cols,
                bias: vec![0.0; rows],
            });
        }
        Self {
            layers,
            pe_bands,
            include_raw,
            dim_psi,
            position_gain: 0.01,
            rotation_gain: 0.1,
            scale_gain: 0.1,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Batched forward pass over anchor positions. The expression vector must
    /// be exactly `dim_psi` long after caller-side zero padding.
    pub fn forward(
        &self,
        positions: &[Vec3],
        psi: &[f64],
    ) -> Result<SpatialOffsets, AvatarError> {
        if psi.len() > self.dim_psi {
            return Err(AvatarError::ExpressionTooLong {
                got: psi.len(),
                max: self.dim_psi,
            });
        }
        self.validate()?;
        let mut out = SpatialOffsets {
            position: Vec::with_capacity(positions.len()),
            rotation: Vec::with_capacity(positions.len()),
            log_scale: Vec::with_capacity(positions.len()),
        };
        let mut input = Vec::with_capacity(self.input_dim());
        let mut scratch_a: Vec<f64> = Vec::new();
        let mut scratch_b: Vec<f64> = Vec::new();
        for &p in positions {
            positional_encoding(p, self.pe_bands, self.include_raw, &mut input);
            input.extend_from_slice(psi);
            input.resize(self.input_dim(), 0.0);

            scratch_a.clear();
            scratch_a.extend_from_slice(&input);
            let last = self.layers.len() - 1;
            for (i, layer) in self.layers.iter().enumerate() {
                layer.forward(&scratch_a, &mut scratch_b);
                if i != last {
                    for x in scratch_b.iter_mut() {
                        if *x < 0.0 {
                            *x *= LEAKY_SLOPE;
                        }
                    }
                }
                std::mem::swap(&mut scratch_a, &mut scratch_b);
            }
            let y = &scratch_a;
            let pg = self.position_gain as f64;
            let rg = self.rotation_gain as f64;
            let sg = self.scale_gain as f64;
            out.position.push([y[0] * pg, y[1] * pg, y[2] * pg]);
            out.rotation.push([y[3] * rg, y[4] * rg, y[5] * rg, y[6] * rg]);
            out.log_scale.push([y[7] * sg, y[8] * sg, y[9] * sg]);
        }
        Ok(out)
    }
}

/// Render-ready per-frame splats: offset positions, re-normalized rotations,
/// exponentiated scales, and sigmoid opacities.
#[derive(Debug, Clone)]
pub struct ComposedGaussians {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub scales: Vec<Vec3>,
    pub alphas: Vec<f64>,
    pub sh_base: Vec<[f32; 3]>,
    pub sh_rest: Vec<f32>,
    pub sh_degree: u8,
}

impl ComposedGaussians {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Applies offsets to the static attributes: positions add, rotations add
/// then re-normalize, log-scales add then exponentiate. Opacity is static.
pub fn compose(
    base: &GaussianSet,
    mesh_pos: &[Vec3],
    offsets: &SpatialOffsets,
) -> Result<ComposedGaussians, AvatarError> {
    let n = base.len();
    base.validate()?;
    if mesh_pos.len() != n
        || offsets.position.len() != n
        || offsets.rotation.len() != n
        || offsets.log_scale.len() != n
    {
        return Err(AvatarError::CountMismatch);
    }
    let mut out = ComposedGaussians {
        positions: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        alphas: Vec::with_capacity(n),
        sh_base: base.sh_base.clone(),
        sh_rest: base.sh_rest.clone(),
        sh_degree: base.sh_degree,
    };
    for i in 0..n {
        out.positions.push(math::add3(mesh_pos[i], offsets.position[i]));
        let r = base.rotations[i];
        let dr = offsets.rotation[i];
        let q = [
            r[0] as f64 + dr[0],
            r[1] as f64 + dr[1],
            r[2] as f64 + dr[2],
            r[3] as f64 + dr[3],
        ];
        if math::quat_norm(q) < 1e-8 {
            return Err(AvatarError::DegenerateRotation(i));
        }
        out.rotations.push(math::quat_normalize(q));
        let s = base.log_scales[i];
        let ds = offsets.log_scale[i];
        out.scales.push([
            (s[0] as f64 + ds[0]).exp(),
            (s[1] as f64 + ds[1]).exp(),
            (s[2] as f64 + ds[2]).exp(),
        ]);
        out.alphas.push(math::sigmoid(base.opacity_logits[i] as f64));
    }
    Ok(out)
}

/// A complete avatar: splat attributes plus the offset network, bound to the
/// base model it was sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Avatar {
    pub gaussians: GaussianSet,
    pub network: OffsetNetwork,
    /// Anchor sampling target; anchors regenerate from the base model.
    pub grid_target: u32,
    pub model_hash: u64,
    /// Compact latent sections carried through an unpack so that re-packing
    /// with the same configuration is byte-stable. Not persisted.
    pub latent_cache: Option<crate::model::LatentCache>,
}

impl Avatar {
    /// Deterministic synthetic avatar over a model: UV-grid anchors, smooth
    /// seeded attribute fields, and a random offset network.
    pub fn generate(
        model: &BlendshapeHead,
        n_target: usize,
        sh_degree: u8,
        dim_psi: usize,
        seed: u64,
    ) -> Result<Self, AvatarError> {
        let anchors = anchor_points(model, n_target)?;
        let n = anchors.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x617661_74);

        // Smooth fields over UV keep nearby points correlated, the way a
        // trained avatar's attributes are.
        let mut fields = |count: usize| -> Vec<crate::head::SmoothField> {
            (0..count)
                .map(|_| crate::head::SmoothField::sample(&mut rng, 3))
                .collect()
        };
        let rot_fields = fields(3);
        let scale_fields = fields(3);
        let opacity_field = fields(1);
        let color_fields = fields(3);
        let rw = rest_width(sh_degree);
        let rest_fields = fields(rw);

        // Anchor UV coordinates for field evaluation.
        let uvs: Vec<(f64, f64)> = anchors
            .iter()
            .map(|a| {
                let f = model.faces[a.face as usize];
                let mut u = 0.0;
                let mut v = 0.0;
                for j in 0..3 {
                    let p = model.uv[f[j] as usize];
                    u += a.bary[j] as f64 * p[0] as f64;
                    v += a.bary[j] as f64 * p[1] as f64;
                }
                (u, v)
            })
            .collect();

        let grid = (n_target as f64).sqrt().floor().max(1.0);
        let base_log_scale = (2.0 * 110.0 / grid).ln();

        let mut rotations = Vec::with_capacity(n);
        let mut log_scales = Vec::with_capacity(n);
        let mut opacity_logits = Vec::with_capacity(n);
        let mut sh_base = Vec::with_capacity(n);
        let mut sh_rest = Vec::with_capacity(n * rw);
        const SH0: f64 = 0.282_094_791_773_878_14;
        for &(u, v) in &uvs {
            let axis = [
                rot_fields[0].eval(u, v),
                rot_fields[1].eval(u, v),
                1.0 + rot_fields[2].eval(u, v) * 0.5,
            ];
            let angle = 0.25 * rot_fields[0].eval(v, u);
            let axis = math::normalize3(axis);
            let half = angle / 2.0;
            let q = [
                half.cos(),
                axis[0] * half.sin(),
                axis[1] * half.sin(),
                axis[2] * half.sin(),
            ];
            let q = math::quat_normalize(q);
            rotations.push([q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32]);
            log_scales.push([
                (base_log_scale + 0.3 * scale_fields[0].eval(u, v)) as f32,
                (base_log_scale + 0.3 * scale_fields[1].eval(u, v)) as f32,
                (base_log_scale + 0.3 * scale_fields[2].eval(u, v)) as f32,
            ]);
            opacity_logits.push((2.2 + opacity_field[0].eval(u, v)) as f32);
            sh_base.push([
                ((0.5 + 0.4 * color_fields[0].eval(u, v)) / SH0) as f32,
                ((0.5 + 0.4 * color_fields[1].eval(u, v)) / SH0) as f32,
                ((0.5 + 0.4 * color_fields[2].eval(u, v)) / SH0) as f32,
            ]);
            for field in &rest_fields {
                sh_rest.push((0.15 * field.eval(u, v)) as f32);
            }
        }

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
        Ok(Self {
            gaussians,
            network: OffsetNetwork::generate(seed ^ 0x6e65_74, dim_psi, 256),
            grid_target: n_target as u32,
            model_hash: model.content_hash(),
            latent_cache: None,
        })
    }
}
