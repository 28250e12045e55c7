//! Resizing to a fixed grid and min-max intensity normalization.
//!
//! Resampling uses the align-centers convention: output index `i` on an axis
//! of length `n_dst` reads the source at
//! `(i + 0.5) · n_src / n_dst − 0.5`, clamped to `[0, n_src − 1]`. Equal
//! source and target shapes therefore map every voxel onto itself.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{IntensityDomain, Shape3, Volume};

/// Default network input grid: 64 slices of 256 × 256.
pub const DEFAULT_TARGET: Shape3 = Shape3::new(64, 256, 256);

/// Source coordinate for output index `dst` (align centers, edge clamped).
#[inline]
pub fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let scale = src_len as f64 / dst_len as f64;
    ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64)
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

impl Tap {
    #[inline]
    fn at(x: f64, len: usize) -> Self {
        let lo = (x.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        Tap {
            lo,
            hi,
            t: x - lo as f64,
        }
    }
}

fn axis_taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    (0..dst_len)
        .map(|i| Tap::at(source_coord(i, src_len, dst_len), src_len))
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Trilinear resize to `target`. The intensity domain is carried over.
pub fn resize_trilinear(volume: &Volume, target: Shape3) -> Result<Volume> {
    if target.depth == 0 || target.height == 0 || target.width == 0 {
        return Err(Error::InvalidTarget(target.as_tuple()));
    }
    let src = volume.shape();
    let (td, th, tw) = (
        axis_taps(src.depth, target.depth),
        axis_taps(src.height, target.height),
        axis_taps(src.width, target.width),
    );
    let data = volume.data();
    let at = |d: usize, h: usize, w: usize| data[(d * src.height + h) * src.width + w] as f64;

    let mut out = vec![0.0f32; target.len()];
    out.par_chunks_mut(target.slice_len())
        .zip(td.par_iter())
        .for_each(|(plane, zd)| {
            for (row, yh) in plane.chunks_mut(target.width).zip(&th) {
                for (o, xw) in row.iter_mut().zip(&tw) {
                    let along_w = |d: usize, h: usize| lerp(at(d, h, xw.lo), at(d, h, xw.hi), xw.t);
                    let along_h = |d: usize| lerp(along_w(d, yh.lo), along_w(d, yh.hi), yh.t);
                    *o = lerp(along_h(zd.lo), along_h(zd.hi), zd.t) as f32;
                }
            }
        });
    Ok(Volume::from_parts(target, out, volume.domain()))
}

/// Maps `[lo, hi]` affinely onto `[0, 1]`, clamping values outside it.
/// A degenerate range (`hi <= lo`) yields zeros.
pub fn normalize_with_range(volume: &Volume, lo: f32, hi: f32) -> Volume {
    let data = if hi > lo {
        let (lo, span) = (lo as f64, hi as f64 - lo as f64);
        volume
            .data()
            .par_iter()
            .map(|&v| ((v as f64 - lo) / span).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.0; volume.data().len()]
    };
    Volume::from_parts(volume.shape(), data, IntensityDomain::Unit)
}

/// Whole-volume min-max normalization to `[0, 1]`.
///
/// For a non-constant input the minimum maps to exactly 0 and the maximum to
/// exactly 1. Constant volumes become all zeros.
pub fn normalize_unit(volume: &Volume) -> Volume {
    let (lo, hi) = volume.min_max();
    if hi <= lo {
        log::warn!("constant volume normalized to zeros");
    }
    normalize_with_range(volume, lo, hi)
}

/// Bilinear sample of a `height × width` plane at fractional `(y, x)`,
/// which must already lie inside `[0, height−1] × [0, width−1]`.
#[inline]
pub fn sample_bilinear(plane: &[f32], height: usize, width: usize, y: f64, x: f64) -> f64 {
    let ty = Tap::at(y, height);
    let tx = Tap::at(x, width);
    let at = |r: usize, c: usize| plane[r * width + c] as f64;
    lerp(
        lerp(at(ty.lo, tx.lo), at(ty.lo, tx.hi), tx.t),
        lerp(at(ty.hi, tx.lo), at(ty.hi, tx.hi), tx.t),
        ty.t,
    )
}
