//! Confusion matrices and macro-averaged F1 over a fixed category set.
//!
//! Precision, recall and F1 that would be `0/0` are defined as 0, and the
//! macro average always runs over every category, including ones absent
//! from the evaluated samples.

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};

/// `C × C` counts; rows are true categories, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    categories: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(categories: usize) -> Self {
        Self {
            categories,
            counts: vec![0; categories * categories],
        }
    }

    pub fn from_indices(truth: &[usize], pred: &[usize], categories: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch(truth.len(), pred.len()));
        }
        let mut cm = Self::zeros(categories);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= categories || p >= categories {
                return Err(Error::OutOfRange(format!(
                    "label index {} of {categories}",
                    t.max(p)
                )));
            }
            cm.counts[t * categories + p] += 1;
        }
        Ok(cm)
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.categories + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.categories.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    /// Relabels category `i` as `perm[i]` on both axes.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.categories;
        let mut out = Self::zeros(n);
        for t in 0..n {
            for p in 0..n {
                out.counts[perm[t] * n + perm[p]] = self.get(t, p);
            }
        }
        out
    }
}

/// Confusion matrix over the four diagnostic categories.
pub fn confusion(truth: &[Category], pred: &[Category]) -> Result<ConfusionMatrix> {
    let t: Vec<usize> = truth.iter().map(|c| c.index()).collect();
    let p: Vec<usize> = pred.iter().map(|c| c.index()).collect();
    ConfusionMatrix::from_indices(&t, &p, Category::COUNT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_category: Vec<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> F1Report {
    let n = cm.categories();
    let per_category: Vec<f64> = (0..n)
        .map(|c| {
            let tp = cm.get(c, c);
            let predicted: u64 = (0..n).map(|t| cm.get(t, c)).sum();
            let actual: u64 = (0..n).map(|p| cm.get(c, p)).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    let macro_f1 = if n == 0 {
        0.0
    } else {
        per_category.iter().sum::<f64>() / n as f64
    };
    F1Report {
        macro_f1,
        per_category,
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}
