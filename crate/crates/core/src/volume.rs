//! The dense `(D, H, W)` scalar grid every stage reads and writes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volume extent: `depth` slices of `height × width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }
}

impl From<(usize, usize, usize)> for Shape3 {
    fn from((d, h, w): (usize, usize, usize)) -> Self {
        Self::new(d, h, w)
    }
}

/// Whether values are guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityDomain {
    Raw,
    Unit,
}

/// Row-major `(D, H, W)` volume of `f32` intensities.
///
/// Invariants: every dimension is at least 1, `data.len() == D·H·W`, and a
/// [`IntensityDomain::Unit`] volume holds only values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    shape: Shape3,
    domain: IntensityDomain,
}

impl Volume {
    pub fn new(shape: impl Into<Shape3>, data: Vec<f32>, domain: IntensityDomain) -> Result<Self> {
        let shape = shape.into();
        if shape.depth == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::InvalidVolume(format!(
                "zero-sized shape {:?}",
                shape.as_tuple()
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::InvalidVolume(format!(
                "shape {:?} needs {} values, got {}",
                shape.as_tuple(),
                shape.len(),
                data.len()
            )));
        }
        if domain == IntensityDomain::Unit && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVolume(
                "unit-domain volume has values outside [0, 1]".into(),
            ));
        }
        Ok(Self {
            data,
            shape,
            domain,
        })
    }

    /// Builds a volume by evaluating `f(d, h, w)` at every voxel.
    pub fn from_fn(
        shape: impl Into<Shape3>,
        domain: IntensityDomain,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.len());
        for d in 0..shape.depth {
            for h in 0..shape.height {
                for w in 0..shape.width {
                    data.push(f(d, h, w));
                }
            }
        }
        Self::new(shape, data, domain)
    }

    pub fn filled(shape: impl Into<Shape3>, value: f32, domain: IntensityDomain) -> Result<Self> {
        let shape = shape.into();
        Self::new(shape, vec![value; shape.len()], domain)
    }

    /// Internal constructor for stage outputs whose invariants hold by construction.
    pub(crate) fn from_parts(shape: Shape3, data: Vec<f32>, domain: IntensityDomain) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self {
            data,
            shape,
            domain,
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.shape.depth
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn domain(&self) -> IntensityDomain {
        self.domain
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.shape.height + h) * self.shape.width + w
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(d, h, w)]
    }

    /// The transverse slice at depth `d`.
    pub fn slice(&self, d: usize) -> &[f32] {
        let n = self.shape.slice_len();
        &self.data[d * n..(d + 1) * n]
    }

    pub fn slices(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.shape.slice_len())
    }

    /// Whole-volume `(min, max)`.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean over all voxels, accumulated in `f64` in storage order.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}
