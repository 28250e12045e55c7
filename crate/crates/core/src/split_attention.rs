//! Forward pass of a single split-attention block at small scale.
//!
//! The block takes `R` equally shaped feature maps ("splits") of `C`
//! channels each, with channels partitioned into `K` cardinal groups:
//!
//! 1. sum the splits elementwise;
//! 2. global-average-pool the sum over `(D, H, W)`;
//! 3. apply a grouped dense layer, ReLU, and a second grouped dense layer,
//!    giving `R` logits per channel;
//! 4. softmax across the radix axis per channel (a sigmoid gate when `R = 1`);
//! 5. output the per-channel weighted sum of the splits.
//!
//! Dense weights use the grouped-convolution layout: `W1` is
//! `reduced × (C/K)` and `W2` is `(R·C) × (reduced/K)`; group `g` owns the
//! contiguous row block `g` of each. Within a group's `W2` block, row
//! `r·(C/K) + j` produces the logit of radix `r` for channel `g·(C/K) + j`.
//! Batch normalization inside the attention head is not modelled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Shape3;

/// `(C, D, H, W)` feature map in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    spatial: Shape3,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, spatial: impl Into<Shape3>, data: Vec<f64>) -> Result<Self> {
        let spatial = spatial.into();
        if channels == 0 || spatial.is_empty() {
            return Err(Error::ShapeMismatch("feature map dimensions must be >= 1".into()));
        }
        if data.len() != channels * spatial.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {channels} channels of {:?}",
                data.len(),
                spatial.as_tuple()
            )));
        }
        Ok(Self {
            channels,
            spatial,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        spatial: impl Into<Shape3>,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let spatial = spatial.into();
        let n = spatial.len();
        let data = (0..channels * n).map(|i| f(i / n, i % n)).collect();
        Self::new(channels, spatial, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> Shape3 {
        self.spatial
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial.len();
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAttnParams {
    #[serde(rename = "R")]
    pub radix: usize,
    #[serde(rename = "K")]
    pub cardinality: usize,
    pub channels: usize,
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl SplitAttnParams {
    /// All-zero weights and biases.
    pub fn zeros(radix: usize, cardinality: usize, channels: usize, reduced: usize) -> Self {
        let cg = channels / cardinality.max(1);
        let rg = reduced / cardinality.max(1);
        Self {
            radix,
            cardinality,
            channels,
            w1: vec![vec![0.0; cg]; reduced],
            b1: vec![0.0; reduced],
            w2: vec![vec![0.0; rg]; radix * channels],
            b2: vec![0.0; radix * channels],
        }
    }

    pub fn reduced(&self) -> usize {
        self.w1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, k, c) = (self.radix, self.cardinality, self.channels);
        if r == 0 || k == 0 || c == 0 {
            return Err(Error::BadGrouping("R, K and channels must be >= 1".into()));
        }
        if c % k != 0 {
            return Err(Error::BadGrouping(format!("{c} channels not divisible by K = {k}")));
        }
        let red = self.reduced();
        if red == 0 || red % k != 0 {
            return Err(Error::BadGrouping(format!(
                "reduced dimension {red} must be >= 1 and divisible by K = {k}"
            )));
        }
        let shape_err = |what: &str| Err(Error::ShapeMismatch(what.to_string()));
        if self.w1.iter().any(|row| row.len() != c / k) {
            return shape_err("W1 rows must have channels/K entries");
        }
        if self.b1.len() != red {
            return shape_err("b1 length must equal W1 row count");
        }
        if self.w2.len() != r * c || self.w2.iter().any(|row| row.len() != red / k) {
            return shape_err("W2 must be (R·channels) × (reduced/K)");
        }
        if self.b2.len() != r * c {
            return shape_err("b2 length must equal R·channels");
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax down each column of an `R × C` logit matrix. With a single row
/// each entry is passed through a sigmoid instead.
pub fn radix_softmax(logits: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let r = logits.len();
    let c = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|row| row.len() != c) {
        return Err(Error::ShapeMismatch("ragged logit matrix".into()));
    }
    if logits.iter().flatten().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if r == 1 {
        return Ok(vec![logits[0].iter().map(|&z| sigmoid(z)).collect()]);
    }
    let mut out = vec![vec![0.0; c]; r];
    for j in 0..c {
        let m = (0..r).map(|i| logits[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..r).map(|i| (logits[i][j] - m).exp()).sum();
        for i in 0..r {
            out[i][j] = (logits[i][j] - m).exp() / s;
        }
    }
    Ok(out)
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAttnTrace {
    pub summed: FeatureMap,
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    /// `R × C`.
    pub logits: Vec<Vec<f64>>,
    /// `R × C`.
    pub attention: Vec<Vec<f64>>,
    pub output: FeatureMap,
}

pub fn split_attention_trace(splits: &[FeatureMap], params: &SplitAttnParams) -> Result<SplitAttnTrace> {
    params.validate()?;
    let first = splits
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no splits".into()))?;
    if splits.len() != params.radix {
        return Err(Error::ShapeMismatch(format!(
            "{} splits for radix {}",
            splits.len(),
            params.radix
        )));
    }
    if splits
        .iter()
        .any(|s| s.channels != first.channels || s.spatial != first.spatial)
    {
        return Err(Error::ShapeMismatch("splits differ in shape".into()));
    }
    if first.channels != params.channels {
        return Err(Error::ShapeMismatch(format!(
            "splits have {} channels, params expect {}",
            first.channels, params.channels
        )));
    }

    let (r, k, c) = (params.radix, params.cardinality, params.channels);
    let (cg, rg) = (c / k, params.reduced() / k);
    let n = first.spatial.len();

    let summed_data: Vec<f64> = (0..c * n)
        .map(|i| splits.iter().map(|s| s.data[i]).sum())
        .collect();
    let summed = FeatureMap::new(c, first.spatial, summed_data)?;
    let pooled: Vec<f64> = (0..c)
        .map(|ch| summed.channel(ch).iter().sum::<f64>() / n as f64)
        .collect();

    let mut hidden = vec![0.0; params.reduced()];
    let mut logits = vec![vec![0.0; c]; r];
    for g in 0..k {
        for i in 0..rg {
            let row = g * rg + i;
            let z: f64 = params.b1[row]
                + params.w1[row]
                    .iter()
                    .zip(&pooled[g * cg..(g + 1) * cg])
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            hidden[row] = z.max(0.0);
        }
        for radix in 0..r {
            for j in 0..cg {
                let row = g * r * cg + radix * cg + j;
                logits[radix][g * cg + j] = params.b2[row]
                    + params.w2[row]
                        .iter()
                        .zip(&hidden[g * rg..(g + 1) * rg])
                        .map(|(w, h)| w * h)
                        .sum::<f64>();
            }
        }
    }

    let attention = radix_softmax(&logits)?;
    let out: Vec<f64> = (0..c * n)
        .map(|i| {
            let ch = i / n;
            splits
                .iter()
                .zip(&attention)
                .map(|(s, a)| a[ch] * s.data[i])
                .sum()
        })
        .collect();
    let output = FeatureMap::new(c, first.spatial, out)?;
    Ok(SplitAttnTrace {
        summed,
        pooled,
        hidden,
        logits,
        attention,
        output,
    })
}

pub fn split_attention_forward(splits: &[FeatureMap], params: &SplitAttnParams) -> Result<FeatureMap> {
    split_attention_trace(splits, params).map(|t| t.output)
}

/// Scalar-scale demo: `R = 2`, `K = 1`, two channels, a `1×1×1` extent and
/// hand-set 2×2 weight matrices. Returns `(splits, params)`.
pub fn demo_case() -> (Vec<FeatureMap>, SplitAttnParams) {
    let splits = vec![
        FeatureMap::new(2, (1, 1, 1), vec![1.0, 2.0]).expect("static shape"),
        FeatureMap::new(2, (1, 1, 1), vec![3.0, -1.0]).expect("static shape"),
    ];
    let params = SplitAttnParams {
        radix: 2,
        cardinality: 1,
        channels: 2,
        w1: vec![vec![0.5, -1.0], vec![1.0, 0.25]],
        b1: vec![0.0, 0.1],
        w2: vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.5, -0.5],
        ],
        b2: vec![0.0, 0.0, 0.2, 0.0],
    };
    (splits, params)
}
