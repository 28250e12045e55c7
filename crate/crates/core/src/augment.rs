//! Seed-driven training augmentations for unit-domain volumes.
//!
//! Four transforms run in a fixed order: a random resized crop of the
//! transverse plane, a random crop (or symmetric zero-pad) along depth, a
//! rotation of every transverse slice by one shared angle, and a
//! brightness/contrast jitter. Every random draw is recorded in a
//! [`DrawLog`]; [`replay`] re-applies a log and reproduces the sampled
//! output bit for bit.
//!
//! Randomness comes from a ChaCha8 generator keyed by
//! `SHA-256(seed, epoch, scan_id)`, with one stream id per transform. The
//! draws for a scan therefore never depend on which other scans were
//! processed, in what order, or on how many threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::resample::{sample_bilinear, source_coord};
use crate::volume::{Shape3, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Crop area as a fraction of the transverse plane.
    pub crop_scale_range: (f64, f64),
    /// Output slice count.
    pub depth_crop: usize,
    pub rotation_range_deg: (f64, f64),
    pub brightness_delta_max: f64,
    pub contrast_factor_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            crop_scale_range: (0.7, 1.0),
            depth_crop: 64,
            rotation_range_deg: (-10.0, 10.0),
            brightness_delta_max: 0.1,
            contrast_factor_range: (0.9, 1.1),
            seed: 0,
        }
    }
}

impl AugmentParams {
    /// Parameters under which every transform is the identity for a volume
    /// of `depth` slices.
    pub fn identity(depth: usize) -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            depth_crop: depth,
            rotation_range_deg: (0.0, 0.0),
            brightness_delta_max: 0.0,
            contrast_factor_range: (1.0, 1.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        let (lo, hi) = self.crop_scale_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("crop_scale_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if self.depth_crop == 0 {
            return bad("depth_crop must be at least 1".into());
        }
        let (rlo, rhi) = self.rotation_range_deg;
        if !(rlo.is_finite() && rhi.is_finite() && rlo <= rhi && rlo == -rhi) {
            return bad(format!("rotation_range_deg ({rlo}, {rhi}) must be symmetric"));
        }
        if !(self.brightness_delta_max >= 0.0 && self.brightness_delta_max.is_finite()) {
            return bad("brightness_delta_max must be finite and non-negative".into());
        }
        let (clo, chi) = self.contrast_factor_range;
        if !(clo.is_finite() && chi.is_finite() && 0.0 <= clo && clo <= 1.0 && 1.0 <= chi) {
            return bad(format!("contrast_factor_range ({clo}, {chi}) must contain 1"));
        }
        Ok(())
    }
}

/// Crop rectangle in pixel units: rows `top..top+height`, cols `left..left+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Depth crop offset, or symmetric padding when the volume is too short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthDraw {
    pub offset: usize,
    pub pad_before: usize,
    pub pad_after: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawLog {
    pub crop: Option<CropRect>,
    pub depth: Option<DepthDraw>,
    pub angle_deg: Option<f64>,
    pub brightness_delta: Option<f64>,
    pub contrast_factor: Option<f64>,
}

impl DrawLog {
    fn merge(self, other: DrawLog) -> DrawLog {
        DrawLog {
            crop: other.crop.or(self.crop),
            depth: other.depth.or(self.depth),
            angle_deg: other.angle_deg.or(self.angle_deg),
            brightness_delta: other.brightness_delta.or(self.brightness_delta),
            contrast_factor: other.contrast_factor.or(self.contrast_factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    ResizedCrop = 0,
    DepthCrop = 1,
    Rotation = 2,
    ColorJitter = 3,
}

/// Per-item key for the counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemStream {
    key: [u8; 32],
}

impl ItemStream {
    pub fn new(seed: u64, scan_id: &str, epoch: u64) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(epoch.to_le_bytes());
        h.update((scan_id.len() as u64).to_le_bytes());
        h.update(scan_id.as_bytes());
        Self {
            key: h.finalize().into(),
        }
    }

    pub fn rng(&self, transform: Transform) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(transform as u64);
        rng
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Crops `rect` from every transverse slice and resizes it back to `(H, W)`
/// with bilinear interpolation (align-centers convention).
pub fn apply_resized_crop(volume: &Volume, rect: CropRect) -> Volume {
    let shape = volume.shape();
    let (h, w) = (shape.height, shape.width);
    let ys: Vec<f64> = (0..h)
        .map(|y| rect.top as f64 + source_coord(y, rect.height, h))
        .collect();
    let xs: Vec<f64> = (0..w)
        .map(|x| rect.left as f64 + source_coord(x, rect.width, w))
        .collect();
    let mut out = vec![0.0f32; shape.len()];
    out.par_chunks_mut(shape.slice_len())
        .zip(volume.data().par_chunks(shape.slice_len()))
        .for_each(|(dst, src)| {
            for (row, &y) in dst.chunks_mut(w).zip(&ys) {
                for (o, &x) in row.iter_mut().zip(&xs) {
                    *o = sample_bilinear(src, h, w, y, x) as f32;
                }
            }
        });
    Volume::from_parts(shape, out, volume.domain())
}

pub fn random_resized_crop_transverse<R: Rng + ?Sized>(
    volume: &Volume,
    params: &AugmentParams,
    rng: &mut R,
) -> (Volume, DrawLog) {
    let (h, w) = (volume.height(), volume.width());
    let scale = uniform(rng, params.crop_scale_range.0, params.crop_scale_range.1);
    let side = scale.sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let rect = CropRect {
        top,
        left,
        height: ch,
        width: cw,
    };
    let log = DrawLog {
        crop: Some(rect),
        ..DrawLog::default()
    };
    (apply_resized_crop(volume, rect), log)
}

/// Keeps `depth` slices from `draw.offset`, or zero-pads to `depth`.
pub fn apply_depth_crop(volume: &Volume, draw: DepthDraw, depth: usize) -> Volume {
    let shape = volume.shape();
    let n = shape.slice_len();
    let data = if volume.depth() > depth {
        volume.data()[draw.offset * n..(draw.offset + depth) * n].to_vec()
    } else {
        let mut d = vec![0.0f32; depth * n];
        d[draw.pad_before * n..(draw.pad_before + volume.depth()) * n]
            .copy_from_slice(volume.data());
        d
    };
    Volume::from_parts(
        Shape3::new(depth, shape.height, shape.width),
        data,
        volume.domain(),
    )
}

pub fn random_depth_crop<R: Rng + ?Sized>(
    volume: &Volume,
    params: &AugmentParams,
    rng: &mut R,
) -> (Volume, DrawLog) {
    let (d, k) = (volume.depth(), params.depth_crop);
    let draw = if d > k {
        DepthDraw {
            offset: rng.random_range(0..=d - k),
            pad_before: 0,
            pad_after: 0,
        }
    } else {
        let pad = k - d;
        DepthDraw {
            offset: 0,
            pad_before: pad / 2,
            pad_after: pad - pad / 2,
        }
    };
    let log = DrawLog {
        depth: Some(draw),
        ..DrawLog::default()
    };
    (apply_depth_crop(volume, draw, k), log)
}

const EDGE_EPS: f64 = 1e-9;

/// Rotates every transverse slice by `angle_deg` about the slice center.
///
/// Angles are counter-clockwise with `x` along columns and `y` along rows,
/// so 90° maps `out[y][x] = in[W−1−x][y]` on a square slice. Samples falling
/// outside the slice read as 0.
pub fn apply_rotation(volume: &Volume, angle_deg: f64) -> Volume {
    let shape = volume.shape();
    let (h, w) = (shape.height, shape.width);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ymax, xmax) = ((h - 1) as f64, (w - 1) as f64);

    let mut out = vec![0.0f32; shape.len()];
    out.par_chunks_mut(shape.slice_len())
        .zip(volume.data().par_chunks(shape.slice_len()))
        .for_each(|(dst, src)| {
            for (y, row) in dst.chunks_mut(w).enumerate() {
                for (x, o) in row.iter_mut().enumerate() {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    let sx = cx + cos * dx + sin * dy;
                    let sy = cy - sin * dx + cos * dy;
                    if sx < -EDGE_EPS || sy < -EDGE_EPS || sx > xmax + EDGE_EPS || sy > ymax + EDGE_EPS
                    {
                        *o = 0.0;
                    } else {
                        *o = sample_bilinear(src, h, w, sy.clamp(0.0, ymax), sx.clamp(0.0, xmax))
                            as f32;
                    }
                }
            }
        });
    Volume::from_parts(shape, out, volume.domain())
}

pub fn random_rotation_transverse<R: Rng + ?Sized>(
    volume: &Volume,
    params: &AugmentParams,
    rng: &mut R,
) -> (Volume, DrawLog) {
    let angle = uniform(rng, params.rotation_range_deg.0, params.rotation_range_deg.1);
    let log = DrawLog {
        angle_deg: Some(angle),
        ..DrawLog::default()
    };
    (apply_rotation(volume, angle), log)
}

/// `v' = clamp(f·(v − mean) + mean + b, 0, 1)` with the whole-volume mean.
pub fn apply_color_jitter(volume: &Volume, brightness: f64, contrast: f64) -> Volume {
    let mean = volume.mean();
    let data = volume
        .data()
        .par_iter()
        .map(|&v| (contrast * (v as f64 - mean) + mean + brightness).clamp(0.0, 1.0) as f32)
        .collect();
    Volume::from_parts(volume.shape(), data, volume.domain())
}

pub fn color_jitter<R: Rng + ?Sized>(
    volume: &Volume,
    params: &AugmentParams,
    rng: &mut R,
) -> (Volume, DrawLog) {
    let b = uniform(rng, -params.brightness_delta_max, params.brightness_delta_max);
    let f = uniform(rng, params.contrast_factor_range.0, params.contrast_factor_range.1);
    let log = DrawLog {
        brightness_delta: Some(b),
        contrast_factor: Some(f),
        ..DrawLog::default()
    };
    (apply_color_jitter(volume, b, f), log)
}

/// Runs all four transforms with streams derived from
/// `(params.seed, scan_id, epoch)`. Output shape is `(depth_crop, H, W)`.
pub fn augment_pipeline(
    volume: &Volume,
    params: &AugmentParams,
    scan_id: &str,
    epoch: u64,
) -> (Volume, DrawLog) {
    let stream = ItemStream::new(params.seed, scan_id, epoch);
    let (v, a) = random_resized_crop_transverse(volume, params, &mut stream.rng(Transform::ResizedCrop));
    let (v, b) = random_depth_crop(&v, params, &mut stream.rng(Transform::DepthCrop));
    let (v, c) = random_rotation_transverse(&v, params, &mut stream.rng(Transform::Rotation));
    let (v, d) = color_jitter(&v, params, &mut stream.rng(Transform::ColorJitter));
    (v, a.merge(b).merge(c).merge(d))
}

/// Re-applies a recorded [`DrawLog`]. Missing entries are skipped, except
/// depth, which falls back to `params.depth_crop` with centered padding.
pub fn replay(volume: &Volume, params: &AugmentParams, log: &DrawLog) -> Volume {
    let mut v = match log.crop {
        Some(rect) => apply_resized_crop(volume, rect),
        None => volume.clone(),
    };
    if let Some(draw) = log.depth {
        v = apply_depth_crop(&v, draw, params.depth_crop);
    }
    if let Some(angle) = log.angle_deg {
        v = apply_rotation(&v, angle);
    }
    if let (Some(b), Some(f)) = (log.brightness_delta, log.contrast_factor) {
        v = apply_color_jitter(&v, b, f);
    }
    v
}

/// Augments many `(scan_id, volume)` items on a pool of `workers` threads.
/// Results are in input order and independent of `workers`.
pub fn augment_batch(
    items: &[(String, Volume)],
    params: &AugmentParams,
    epoch: u64,
    workers: usize,
) -> Result<Vec<(Volume, DrawLog)>> {
    params.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(pool.install(|| {
        items
            .par_iter()
            .map(|(id, v)| augment_pipeline(v, params, id, epoch))
            .collect()
    }))
}
