//! Removal of leading and trailing slices that carry no lung tissue.
//!
//! Lungs are air-filled, so thoracic slices hold a large share of voxels near
//! the volume minimum while neck and abdomen slices hold few. A slice
//! qualifies when its *air fraction* reaches `air_fraction_threshold`; the
//! longest contiguous run of qualifying slices (at least `min_run` long) is
//! kept. When nothing qualifies the whole volume is kept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Inclusive slice interval `[d_lo, d_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrimRange {
    pub d_lo: usize,
    pub d_hi: usize,
}

impl TrimRange {
    pub fn full(depth: usize) -> Self {
        Self {
            d_lo: 0,
            d_hi: depth.saturating_sub(1),
        }
    }

    pub fn len(&self) -> usize {
        self.d_hi - self.d_lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.d_lo > self.d_hi || self.d_hi >= depth {
            return Err(Error::OutOfRange(format!(
                "trim range [{}, {}] invalid for depth {depth}",
                self.d_lo, self.d_hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimParams {
    pub air_fraction_threshold: f64,
    /// Fraction of the volume's intensity range below which a voxel counts as air.
    pub intensity_air_cutoff: f64,
    pub min_run: usize,
}

impl Default for TrimParams {
    fn default() -> Self {
        Self {
            air_fraction_threshold: 0.08,
            intensity_air_cutoff: 0.15,
            min_run: 8,
        }
    }
}

impl TrimParams {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.air_fraction_threshold) {
            return Err(Error::InvalidParams(format!(
                "air_fraction_threshold {} not in [0, 1]",
                self.air_fraction_threshold
            )));
        }
        if !unit.contains(&self.intensity_air_cutoff) {
            return Err(Error::InvalidParams(format!(
                "intensity_air_cutoff {} not in [0, 1]",
                self.intensity_air_cutoff
            )));
        }
        if self.min_run == 0 {
            return Err(Error::InvalidParams("min_run must be positive".into()));
        }
        Ok(())
    }
}

fn air_level(vmin: f32, vmax: f32, cutoff: f64) -> f64 {
    vmin as f64 + cutoff * (vmax as f64 - vmin as f64)
}

fn fraction_below(slice: &[f32], level: f64) -> f64 {
    let n = slice.iter().filter(|&&v| (v as f64) <= level).count();
    n as f64 / slice.len() as f64
}

/// Share of voxels in slice `d` at or below `vmin + cutoff·(vmax − vmin)`,
/// using whole-volume extremes. Constant volumes report 1.0.
pub fn slice_air_fraction(volume: &Volume, d: usize, intensity_air_cutoff: f64) -> Result<f64> {
    if d >= volume.depth() {
        return Err(Error::OutOfRange(format!(
            "slice {d} of depth {}",
            volume.depth()
        )));
    }
    let (vmin, vmax) = volume.min_max();
    if vmax <= vmin {
        return Ok(1.0);
    }
    Ok(fraction_below(
        volume.slice(d),
        air_level(vmin, vmax, intensity_air_cutoff),
    ))
}

/// Air fraction of every slice, in depth order.
pub fn air_fractions(volume: &Volume, intensity_air_cutoff: f64) -> Vec<f64> {
    let (vmin, vmax) = volume.min_max();
    if vmax <= vmin {
        return vec![1.0; volume.depth()];
    }
    let level = air_level(vmin, vmax, intensity_air_cutoff);
    volume
        .data()
        .par_chunks_exact(volume.shape().slice_len())
        .map(|s| fraction_below(s, level))
        .collect()
}

/// Longest run of `true`, earliest first on ties; `None` if all false.
pub(crate) fn longest_run(flags: &[bool]) -> Option<TrimRange> {
    let mut best: Option<TrimRange> = None;
    let mut start = None;
    for (i, &on) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let run = TrimRange { d_lo: s, d_hi: i - 1 };
                if best.is_none_or(|b| run.len() > b.len()) {
                    best = Some(run);
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Finds the slice interval to keep. Never fails: with no qualifying run the
/// full range `[0, D−1]` is returned.
pub fn detect_lung_range(volume: &Volume, params: &TrimParams) -> TrimRange {
    let flags: Vec<bool> = air_fractions(volume, params.intensity_air_cutoff)
        .into_iter()
        .map(|f| f >= params.air_fraction_threshold)
        .collect();
    match longest_run(&flags) {
        Some(run) if run.len() >= params.min_run => run,
        _ => TrimRange::full(volume.depth()),
    }
}

/// Copies slices `[d_lo, d_hi]` verbatim into a new volume.
pub fn apply_trim(volume: &Volume, range: TrimRange) -> Result<Volume> {
    range.validate(volume.depth())?;
    let n = volume.shape().slice_len();
    let data = volume.data()[range.d_lo * n..(range.d_hi + 1) * n].to_vec();
    let mut shape = volume.shape();
    shape.depth = range.len();
    Ok(Volume::from_parts(shape, data, volume.domain()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::IntensityDomain;
    use proptest::prelude::*;

    /// Slice `d` gets `air[d]` voxels (out of 16) at 0, the rest at 100.
    fn banded(air: &[usize]) -> Volume {
        Volume::from_fn((air.len(), 4, 4), IntensityDomain::Raw, |d, h, w| {
            if h * 4 + w < air[d] {
                0.0
            } else {
                100.0
            }
        })
        .unwrap()
    }

    #[test]
    fn fraction_examples() {
        let v = banded(&[16, 0, 4]);
        assert_eq!(slice_air_fraction(&v, 0, 0.15).unwrap(), 1.0);
        assert_eq!(slice_air_fraction(&v, 1, 0.15).unwrap(), 0.0);
        assert_eq!(slice_air_fraction(&v, 2, 0.15).unwrap(), 0.25);
        assert!(matches!(
            slice_air_fraction(&v, 3, 0.15),
            Err(Error::OutOfRange(_))
        ));
        let flat = Volume::filled((2, 2, 2), 5.0, IntensityDomain::Raw).unwrap();
        assert_eq!(slice_air_fraction(&flat, 1, 0.15).unwrap(), 1.0);
    }

    #[test]
    fn planted_band_is_found() {
        let air: Vec<usize> = (0..100).map(|d| if (20..80).contains(&d) { 8 } else { 0 }).collect();
        let v = banded(&air);
        let p = TrimParams {
            air_fraction_threshold: 0.3,
            ..TrimParams::default()
        };
        assert_eq!(detect_lung_range(&v, &p), TrimRange { d_lo: 20, d_hi: 79 });
    }

    #[test]
    fn nothing_qualifies_keeps_everything() {
        let mut air = vec![0; 30];
        air[0] = 1; // keeps vmin present without reaching the threshold
        let v = banded(&air);
        let p = TrimParams {
            air_fraction_threshold: 0.5,
            ..TrimParams::default()
        };
        assert_eq!(detect_lung_range(&v, &p), TrimRange::full(30));
    }

    #[test]
    fn short_runs_fall_back_to_full() {
        let air: Vec<usize> = (0..30).map(|d| if (5..9).contains(&d) { 8 } else { 0 }).collect();
        assert_eq!(
            detect_lung_range(&banded(&air), &TrimParams::default()),
            TrimRange::full(30)
        );
    }

    #[test]
    fn tie_prefers_lower_start() {
        let air: Vec<usize> = (0..50)
            .map(|d| if (10..20).contains(&d) || (30..40).contains(&d) { 8 } else { 0 })
            .collect();
        assert_eq!(
            detect_lung_range(&banded(&air), &TrimParams::default()),
            TrimRange { d_lo: 10, d_hi: 19 }
        );
    }

    /// Exhaustive oracle: enumerate every interval, keep those fully
    /// qualifying, pick max length then min start.
    fn oracle_run(flags: &[bool]) -> Option<TrimRange> {
        let mut best: Option<TrimRange> = None;
        for lo in 0..flags.len() {
            for hi in lo..flags.len() {
                if flags[lo..=hi].iter().all(|&f| f) {
                    let r = TrimRange { d_lo: lo, d_hi: hi };
                    let better = match best {
                        None => true,
                        Some(b) => r.len() > b.len() || (r.len() == b.len() && r.d_lo < b.d_lo),
                    };
                    if better {
                        best = Some(r);
                    }
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn longest_run_matches_enumeration(flags in prop::collection::vec(any::<bool>(), 0..40)) {
            prop_assert_eq!(longest_run(&flags), oracle_run(&flags));
        }

        #[test]
        fn trim_keeps_voxels_verbatim(air in prop::collection::vec(0usize..=16, 1..40)) {
            let v = banded(&air);
            let r = detect_lung_range(&v, &TrimParams { min_run: 1, ..TrimParams::default() });
            let t = apply_trim(&v, r).unwrap();
            prop_assert!(t.depth() <= v.depth());
            for d in 0..t.depth() {
                prop_assert_eq!(t.slice(d), v.slice(r.d_lo + d));
            }
        }

        #[test]
        fn affine_rescaling_keeps_range(air in prop::collection::vec(0usize..=16, 1..40), a in 1u32..50, b in -1000i32..1000) {
            let v = banded(&air);
            let scaled = Volume::from_fn(v.shape(), IntensityDomain::Raw, |d, h, w| v.get(d, h, w) * a as f32 + b as f32).unwrap();
            let p = TrimParams { min_run: 2, ..TrimParams::default() };
            prop_assert_eq!(detect_lung_range(&v, &p), detect_lung_range(&scaled, &p));
        }
    }

    #[test]
    fn apply_trim_shapes() {
        let v = Volume::from_fn((100, 4, 4), IntensityDomain::Unit, |d, _, _| d as f32 / 100.0).unwrap();
        let t = apply_trim(&v, TrimRange { d_lo: 20, d_hi: 79 }).unwrap();
        assert_eq!(t.shape().as_tuple(), (60, 4, 4));
        assert_eq!(t.domain(), IntensityDomain::Unit);
        assert_eq!(apply_trim(&v, TrimRange::full(100)).unwrap(), v);
        let one = apply_trim(&v, TrimRange { d_lo: 5, d_hi: 5 }).unwrap();
        assert_eq!(one.depth(), 1);
        assert_eq!(one.slice(0), v.slice(5));
        assert!(apply_trim(&v, TrimRange { d_lo: 5, d_hi: 100 }).is_err());
        assert!(apply_trim(&v, TrimRange { d_lo: 6, d_hi: 5 }).is_err());
    }

    #[test]
    fn retrimming_a_fully_qualifying_volume_is_identity() {
        let air: Vec<usize> = (0..40).map(|d| if (10..30).contains(&d) { 6 } else { 0 }).collect();
        let v = banded(&air);
        let p = TrimParams::default();
        let once = apply_trim(&v, detect_lung_range(&v, &p)).unwrap();
        let r2 = detect_lung_range(&once, &p);
        assert_eq!(r2, TrimRange::full(once.depth()));
        assert_eq!(apply_trim(&once, r2).unwrap(), once);
    }
}
