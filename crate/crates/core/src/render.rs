//! CPU reference splat rasterizer: anisotropic Gaussians are projected
//! through a pinhole camera, depth sorted, and alpha-composited front to
//! back, plus PSNR/SSIM quality metrics.
//!
//! The rasterizer is a correctness reference. The blending kernel is defined
//! with a hard support cutoff at 3 sigma, so a tiled traversal and a naive
//! all-pixels evaluation see the same kernel and can be compared directly.

use crate::avatar::ComposedGaussians;
use crate::math::{self, Mat3, Quat, Vec3};
use crate::wire;
use std::path::Path;
use thiserror::Error;

/// Blending weight clamp.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Squared Mahalanobis support radius: the kernel is zero beyond 3 sigma.
pub const CULL_MAHALANOBIS_SQ: f64 = 9.0;
/// Near plane in scene units.
pub const Z_NEAR: f64 = 0.01;
/// Screen-space covariance condition-number limit; worse splats are skipped.
pub const CONDITION_LIMIT: f64 = 1e12;

const TILE: usize = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera rotation is not orthonormal (deviation {0:.3e})")]
    BadRotation(f64),
    #[error("image dimensions must be at least 1x1")]
    BadDimensions,
    #[error("quaternion norm {0} deviates from 1 by more than 1e-4")]
    NonUnitQuaternion(f64),
    #[error("scales must be positive, got {0:?}")]
    NonPositiveScale([f64; 3]),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image too small for an 11x11 window: {0}x{1}")]
    ImageTooSmall(u32, u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encode error: {0}")]
    Png(#[from] png::EncodingError),
}

/// Pinhole camera: world-to-camera rotation and translation plus intrinsics.
/// Points with camera-space `z > Z_NEAR` are visible along +z.
#[derive(Debug, Clone)]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        focal: (f64, f64),
        principal: (f64, f64),
        size: (u32, u32),
    ) -> Result<Self, RenderError> {
        let dev = math::orthonormality_error(&rotation);
        if dev > 1e-6 {
            return Err(RenderError::BadRotation(dev));
        }
        if size.0 == 0 || size.1 == 0 {
            return Err(RenderError::BadDimensions);
        }
        Ok(Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width: size.0,
            height: size.1,
        })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        let rt = math::mat3_transpose(&self.rotation);
        math::scale3(math::mat3_mul_vec(&rt, self.translation), -1.0)
    }
}

/// RGB image with interleaved `f32` channels in `[0, 1]`, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn solid(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit RGB PNG.
    pub fn write_png(&self, path: &Path) -> Result<(), RenderError> {
        let file = std::fs::File::create(path)?;
        let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        writer.write_image_data(&bytes)?;
        Ok(())
    }

    /// Planar little-endian `f32` dump for exact comparisons:
    /// `GFIM`, width, height, then the R, G, B planes.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(b"GFIM");
        wire::put_u32(&mut out, self.width);
        wire::put_u32(&mut out, self.height);
        for ch in 0..3 {
            for px in 0..self.width as usize * self.height as usize {
                wire::put_f32(&mut out, self.data[px * 3 + ch]);
            }
        }
        out
    }

    pub fn write_raw(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.to_raw_bytes())?;
        Ok(())
    }
}

/// Builds the world-space covariance from a unit quaternion and positive
/// scales: rotate a diagonal of squared scales.
pub fn covariance(rotation: Quat, scales: Vec3) -> Result<Mat3, RenderError> {
    let norm = math::quat_norm(rotation);
    if (norm - 1.0).abs() > 1e-4 {
        return Err(RenderError::NonUnitQuaternion(norm));
    }
    if scales.iter().any(|&s| s <= 0.0) {
        return Err(RenderError::NonPositiveScale(scales));
    }
    let r = math::quat_to_mat(math::quat_normalize(rotation));
    let mut rs = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rs[i][j] = r[i][j] * scales[j];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = rs[i][0] * rs[j][0] + rs[i][1] * rs[j][1] + rs[i][2] * rs[j][2];
        }
    }
    Ok(sigma)
}

/// Screen-space footprint of one splat.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    pub mean: [f64; 2],
    /// Symmetric 2x2 covariance as `[xx, xy, yy]`.
    pub cov: [f64; 3],
    pub depth: f64,
}

/// Projects a world-space Gaussian to the image plane. Returns `None` when
/// the point sits behind the near plane (culled, not an error).
///
/// The 2x2 covariance follows the standard linearization: the world
/// covariance is rotated into camera space and squeezed through the pinhole
/// Jacobian at the mean.
pub fn project(mu: Vec3, sigma: &Mat3, cam: &Camera) -> Option<Projected> {
    let p = math::add3(math::mat3_mul_vec(&cam.rotation, mu), cam.translation);
    let z = p[2];
    if z <= Z_NEAR {
        return None;
    }
    let mean = [cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy];

    // J is the 2x3 Jacobian of the pinhole map at p.
    let j = [
        [cam.fx / z, 0.0, -cam.fx * p[0] / (z * z)],
        [0.0, cam.fy / z, -cam.fy * p[1] / (z * z)],
    ];
    // T = J * R; the screen covariance is T * Sigma * T^T.
    let mut t = [[0.0; 3]; 2];
    for (ti, ji) in t.iter_mut().zip(j.iter()) {
        for k in 0..3 {
            ti[k] = ji[0] * cam.rotation[0][k]
                + ji[1] * cam.rotation[1][k]
                + ji[2] * cam.rotation[2][k];
        }
    }
    let mut ts = [[0.0; 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            ts[i][k] = t[i][0] * sigma[0][k] + t[i][1] * sigma[1][k] + t[i][2] * sigma[2][k];
        }
    }
    let xx = ts[0][0] * t[0][0] + ts[0][1] * t[0][1] + ts[0][2] * t[0][2];
    let xy = ts[0][0] * t[1][0] + ts[0][1] * t[1][1] + ts[0][2] * t[1][2];
    let yy = ts[1][0] * t[1][0] + ts[1][1] * t[1][1] + ts[1][2] * t[1][2];
    Some(Projected {
        mean,
        cov: [xx, xy, yy],
        depth: z,
    })
}

/// Rasterization result: the composited image plus per-pixel foreground
/// weight and background transmittance. The two are complementary by
/// construction: `foreground = 1 - transmittance` exactly.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub foreground: Vec<f64>,
    pub transmittance: Vec<f64>,
    /// Splats dropped for an ill-conditioned screen-space covariance.
    pub skipped_ill_conditioned: usize,
    /// Splats behind the near plane.
    pub culled_near: usize,
}

struct Footprint {
    mean: [f64; 2],
    inv: [f64; 3],
    depth: f64,
    alpha: f64,
    color: [f64; 3],
    x_range: (usize, usize),
    y_range: (usize, usize),
}

/// Depth-sorted front-to-back compositing of the splat set over a constant
/// background. Each splat touches only pixels within its 3-sigma extent;
/// blending weights clamp at [`ALPHA_CLAMP`].
pub fn rasterize(
    gaussians: &ComposedGaussians,
    cam: &Camera,
    background: [f32; 3],
) -> Result<RenderOutput, RenderError> {
    let w = cam.width as usize;
    let h = cam.height as usize;
    let mut skipped = 0usize;
    let mut culled = 0usize;

    let cam_center = cam.center();
    let rest_w = crate::avatar::rest_width(gaussians.sh_degree);
    let mut footprints: Vec<Footprint> = Vec::with_capacity(gaussians.len());
    for i in 0..gaussians.len() {
        let sigma = covariance(gaussians.rotations[i], gaussians.scales[i])?;
        let Some(proj) = project(gaussians.positions[i], &sigma, cam) else {
            culled += 1;
            continue;
        };
        let [a, b, c] = proj.cov;
        let (hi, lo) = math::sym2_eigenvalues(a, b, c);
        if !(lo > 0.0) || hi / lo > CONDITION_LIMIT {
            skipped += 1;
            continue;
        }
        let Some(inv) = math::sym2_inverse(a, b, c) else {
            skipped += 1;
            continue;
        };
        let rx = 3.0 * a.sqrt();
        let ry = 3.0 * c.sqrt();
        let x_lo = (proj.mean[0] - rx - 0.5).floor().max(0.0) as usize;
        let x_hi = ((proj.mean[0] + rx + 0.5).ceil().max(0.0) as usize).min(w);
        let y_lo = (proj.mean[1] - ry - 0.5).floor().max(0.0) as usize;
        let y_hi = ((proj.mean[1] + ry + 0.5).ceil().max(0.0) as usize).min(h);
        if x_lo >= x_hi || y_lo >= y_hi {
            continue;
        }
        let dir = math::normalize3(math::sub3(gaussians.positions[i], cam_center));
        let color = eval_sh(
            gaussians.sh_base[i],
            &gaussians.sh_rest[i * rest_w..(i + 1) * rest_w],
            gaussians.sh_degree,
            dir,
        );
        footprints.push(Footprint {
            mean: proj.mean,
            inv,
            depth: proj.depth,
            alpha: gaussians.alphas[i],
            color,
            x_range: (x_lo, x_hi),
            y_range: (y_lo, y_hi),
        });
    }

    // Total order: depth, then construction index for ties.
    let mut order: Vec<usize> = (0..footprints.len()).collect();
    order.sort_by(|&i, &j| {
        footprints[i]
            .depth
            .partial_cmp(&footprints[j].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let tiles_x = (w + TILE - 1) / TILE;
    let tiles_y = (h + TILE - 1) / TILE;
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &ix in &order {
        let f = &footprints[ix];
        let tx_lo = f.x_range.0 / TILE;
        let tx_hi = (f.x_range.1 - 1) / TILE;
        let ty_lo = f.y_range.0 / TILE;
        let ty_hi = (f.y_range.1 - 1) / TILE;
        for ty in ty_lo..=ty_hi {
            for tx in tx_lo..=tx_hi {
                tile_lists[ty * tiles_x + tx].push(ix as u32);
            }
        }
    }

    let mut rgb = vec![0.0f64; w * h * 3];
    let mut trans = vec![1.0f64; w * h];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &tile_lists[ty * tiles_x + tx];
            if list.is_empty() {
                continue;
            }
            let y_end = ((ty + 1) * TILE).min(h);
            let x_end = ((tx + 1) * TILE).min(w);
            for py in ty * TILE..y_end {
                for px in tx * TILE..x_end {
                    let cx = px as f64 + 0.5;
                    let cy = py as f64 + 0.5;
                    let pix = py * w + px;
                    let mut t = 1.0f64;
                    let mut acc = [0.0f64; 3];
                    for &ix in list {
                        let f = &footprints[ix as usize];
                        if px < f.x_range.0
                            || px >= f.x_range.1
                            || py < f.y_range.0
                            || py >= f.y_range.1
                        {
                            continue;
                        }
                        let weight = kernel_weight(f.mean, f.inv, f.alpha, cx, cy);
                        if weight <= 0.0 {
                            continue;
                        }
                        let contrib = weight * t;
                        acc[0] += f.color[0] * contrib;
                        acc[1] += f.color[1] * contrib;
                        acc[2] += f.color[2] * contrib;
                        t *= 1.0 - weight;
                    }
                    trans[pix] = t;
                    rgb[pix * 3] = acc[0];
                    rgb[pix * 3 + 1] = acc[1];
                    rgb[pix * 3 + 2] = acc[2];
                }
            }
        }
    }

    let mut data = Vec::with_capacity(w * h * 3);
    let mut foreground = Vec::with_capacity(w * h);
    for pix in 0..w * h {
        let t = trans[pix];
        foreground.push(1.0 - t);
        for ch in 0..3 {
            data.push((rgb[pix * 3 + ch] + background[ch] as f64 * t) as f32);
        }
    }
    Ok(RenderOutput {
        image: Image {
            width: cam.width,
            height: cam.height,
            data,
        },
        foreground,
        transmittance: trans,
        skipped_ill_conditioned: skipped,
        culled_near: culled,
    })
}

/// The blending weight of one splat at one pixel: opacity times the Gaussian
/// falloff, zero outside the 3-sigma support, clamped at [`ALPHA_CLAMP`].
pub fn kernel_weight(mean: [f64; 2], inv: [f64; 3], alpha: f64, px: f64, py: f64) -> f64 {
    let dx = px - mean[0];
    let dy = py - mean[1];
    let e = inv[0] * dx * dx + 2.0 * inv[1] * dx * dy + inv[2] * dy * dy;
    if e > CULL_MAHALANOBIS_SQ || e < 0.0 {
        return 0.0;
    }
    (alpha * (-0.5 * e).exp()).min(ALPHA_CLAMP)
}

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    0.590_043_589_926_643_5,
];

/// Real spherical-harmonics basis up to degree 3 (16 values); entries past
/// the requested degree are left at zero.
pub fn sh_basis(dir: Vec3, degree: u8) -> [f64; 16] {
    let [x, y, z] = dir;
    let mut b = [0.0f64; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = -SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (3.0 * zz - 1.0);
        b[7] = -SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = -SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = -SH_C3[2] * y * (5.0 * zz - 1.0);
        b[12] = SH_C3[3] * z * (5.0 * zz - 3.0);
        b[13] = -SH_C3[4] * x * (5.0 * zz - 1.0);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = -SH_C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// View-dependent color from SH coefficients, clamped to `[0, 1]`.
/// `rest` holds the higher-order coefficients basis-major, 3 channels each.
pub fn eval_sh(base: [f32; 3], rest: &[f32], degree: u8, dir: Vec3) -> [f64; 3] {
    let basis = sh_basis(dir, degree);
    let mut out = [0.0f64; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let mut acc = SH_C0 * base[ch] as f64;
        for k in 1..(degree as usize + 1) * (degree as usize + 1) {
            acc += basis[k] * rest[(k - 1) * 3 + ch] as f64;
        }
        *o = acc.clamp(0.0, 1.0);
    }
    out
}

/// Peak signal-to-noise ratio over all channels, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, RenderError> {
    if a.width != b.width || a.height != b.height {
        return Err(RenderError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < 1e-10 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Mean SSIM of the luminance channel: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, unit dynamic range, valid window positions only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, RenderError> {
    if a.width != b.width || a.height != b.height {
        return Err(RenderError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    const WIN: usize = 11;
    if (a.width as usize) < WIN || (a.height as usize) < WIN {
        return Err(RenderError::ImageTooSmall(a.width, a.height));
    }
    let w = a.width as usize;
    let h = a.height as usize;
    let luma = |img: &Image| -> Vec<f64> {
        img.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    };
    let la = luma(a);
    let lb = luma(b);

    let mut kernel = [0.0f64; WIN * WIN];
    let sigma = 1.5f64;
    let mut sum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let dy = (i / WIN) as f64 - 5.0;
        let dx = (i % WIN) as f64 - 5.0;
        *k = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        sum += *k;
    }
    kernel.iter_mut().for_each(|k| *k /= sum);

    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - WIN {
        for x0 in 0..=w - WIN {
            let mut ma = 0.0;
            let mut mb = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            let mut sab = 0.0;
            for ky in 0..WIN {
                for kx in 0..WIN {
                    let k = kernel[ky * WIN + kx];
                    let va = la[(y0 + ky) * w + x0 + kx];
                    let vb = lb[(y0 + ky) * w + x0 + kx];
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let s = ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
