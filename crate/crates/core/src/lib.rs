//! Preprocessing, augmentation and evaluation kernels for 3-D chest-CT
//! disease classification.
//!
//! The data path turns an ordered series of grayscale slices into a
//! [`Volume`], drops non-lung slices at both ends ([`trim`]), resamples to a
//! fixed grid and rescales intensities to `[0, 1]` ([`resample`]), and
//! optionally applies seed-driven training augmentations ([`augment`]).
//! [`loss`] and [`metrics`] hold the class-weighted cross-entropy and the
//! macro-averaged F1 used for evaluation, and [`split_attention`] is a
//! small-scale forward pass of the backbone's attention block.
//!
//! The `book/` directory at the repository root walks through each stage;
//! its code listings are compiled and run as doctests of this crate.

pub mod augment;
pub mod category;
pub mod error;
pub mod ingestion;
pub mod loss;
pub mod metrics;
pub mod npy;
pub mod pipeline;
pub mod resample;
pub mod split_attention;
pub mod trim;
pub mod volume;

pub use category::{Category, Sex, Split};
pub use error::{Error, Result};
pub use volume::{IntensityDomain, Shape3, Volume};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/trimming.md")]
    mod trimming {}
    #[doc = include_str!("../../../book/src/resampling.md")]
    mod resampling {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/split_attention.md")]
    mod split_attention {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
