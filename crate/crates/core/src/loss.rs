//! Weighted cross-entropy over a fixed set of categories.
//!
//! For a one-hot target with true category `t` the loss is
//! `−w_t · ln(ŷ_t)`. Through a softmax over logits `z` the gradient is
//! `∂L/∂z_j = w_t · (softmax(z)_j − y_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp on the true-class probability inside the logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    InverseFrequency,
    Uniform,
    Manual,
}

/// Per-category loss weights `w_c` and the counts they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeights {
    weights: Vec<f64>,
    source_counts: Vec<u64>,
    scheme: WeightScheme,
}

impl CategoryWeights {
    /// `w_c = N / (C · n_c)` with `N = Σ n_c`. Equal counts give all ones.
    pub fn inverse_frequency(counts: &[u64]) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 categories, got {}",
                counts.len()
            )));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::ZeroCategoryCount(c));
        }
        let total: u64 = counts.iter().sum();
        let c = counts.len() as f64;
        Ok(Self {
            weights: counts
                .iter()
                .map(|&n| total as f64 / (c * n as f64))
                .collect(),
            source_counts: counts.to_vec(),
            scheme: WeightScheme::InverseFrequency,
        })
    }

    pub fn uniform(categories: usize) -> Self {
        Self {
            weights: vec![1.0; categories],
            source_counts: vec![0; categories],
            scheme: WeightScheme::Uniform,
        }
    }

    pub fn manual(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "weights must be finite and positive, got {w}"
            )));
        }
        let n = weights.len();
        Ok(Self {
            weights,
            source_counts: vec![0; n],
            scheme: WeightScheme::Manual,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn source_counts(&self) -> &[u64] {
        &self.source_counts
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Predicted distribution `ŷ`: entries in `[0, 1]` summing to 1 within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParams("probabilities must lie in [0, 1]".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!("probabilities sum to {s}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One-hot target over `categories` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotTarget {
    class: usize,
    categories: usize,
}

impl OneHotTarget {
    pub fn new(class: usize, categories: usize) -> Result<Self> {
        if class >= categories {
            return Err(Error::OutOfRange(format!(
                "class {class} of {categories}"
            )));
        }
        Ok(Self { class, categories })
    }

    /// Parses an explicit 0/1 vector with exactly one 1.
    pub fn from_slice(y: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        if ones.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidParams("target is not one-hot".into()));
        }
        Self::new(ones[0], y.len())
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.categories];
        y[self.class] = 1.0;
        y
    }
}

fn check_len(n: usize, target: &OneHotTarget, weights: &CategoryWeights) -> Result<()> {
    if target.categories != n {
        return Err(Error::LengthMismatch(n, target.categories));
    }
    if weights.len() != n {
        return Err(Error::LengthMismatch(n, weights.len()));
    }
    Ok(())
}

/// `−Σ_c w_c · y_c · ln(ŷ_c)`, with `ŷ_t` clamped below at [`LOG_EPS`].
pub fn weighted_ce(
    probs: &ProbVector,
    target: &OneHotTarget,
    weights: &CategoryWeights,
) -> Result<f64> {
    check_len(probs.0.len(), target, weights)?;
    let t = target.class;
    Ok(-weights.weights[t] * probs.0[t].max(LOG_EPS).ln())
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Loss and logit gradient of weighted cross-entropy after a softmax.
pub fn weighted_ce_from_logits(
    logits: &[f64],
    target: &OneHotTarget,
    weights: &CategoryWeights,
) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    check_len(logits.len(), target, weights)?;
    let t = target.class;
    let w = weights.weights[t];

    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let log_pt = logits[t] - m - log_sum;
    let loss = -w * log_pt.max(LOG_EPS.ln());

    let mut grad = softmax(logits);
    for (j, g) in grad.iter_mut().enumerate() {
        let y = if j == t { 1.0 } else { 0.0 };
        *g = w * (*g - y);
    }
    Ok((loss, grad))
}
