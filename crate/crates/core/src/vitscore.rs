//! ViTScore: greedy-matched cosine similarity between per-patch features.
//!
//! For feature rows `a_0..a_{n-1}` and `b_0..b_{m-1}`:
//!
//! ```text
//! R  = 1/n Σ_i max_j a_iᵀ b_j
//! P  = 1/m Σ_j max_i a_iᵀ b_j
//! F1 = 2RP / (R + P)
//! ```
//!
//! Only the maximum similarity enters the sums, never its argmax, so ties need
//! no tie-breaking. There is no importance weighting. The mean-pooling
//! variant replaces both maxima with the mean over all `n·m` pairs.

use std::fmt;

use crate::encoder::{encode, Encoder};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::Matrix;
use crate::weights::WeightBundle;

/// Rows handed to [`FeatureMatrix::from_matrix`] must already be unit norm to
/// this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// `n × dim` matrix of unit-norm feature rows, stored in 64-bit.
///
/// Rows are re-normalized in 64-bit on construction so that self-similarity is
/// 1 to double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Accepts an already row-normalized matrix (the encoder output).
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let data: Vec<f64> = m.data().iter().map(|&x| f64::from(x)).collect();
        Self::build(m.rows(), m.cols(), data, true)
    }

    /// Normalizes arbitrary rows; zero rows are rejected.
    pub fn normalized(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(n, dim, data, false)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape {
                op: "FeatureMatrix::from_rows",
                left: vec![rows.len(), dim],
                right: rows.iter().map(Vec::len).collect(),
            });
        }
        Self::normalized(rows.len(), dim, rows.concat())
    }

    fn build(n: usize, dim: usize, mut data: Vec<f64>, require_unit: bool) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::Input(format!("empty feature matrix {n}x{dim}")));
        }
        if data.len() != n * dim {
            return Err(Error::Shape { op: "FeatureMatrix", left: vec![n, dim], right: vec![data.len()] });
        }
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm >= crate::tensor::MIN_ROW_NORM) {
                return Err(Error::DegenerateFeature { row: i });
            }
            if require_unit && (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Input(format!("feature row {i} has norm {norm}, expected unit norm")));
            }
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        Ok(Self { n, dim, data })
    }

    /// Number of feature rows (patches).
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n, self.dim, self.data.iter().map(|&x| x as f32).collect()).expect("consistent shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    /// Greedy max matching.
    Origin,
    /// Mean over all pairs (ablation).
    MeanPooling,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Origin => "origin",
            Pooling::MeanPooling => "mean_pooling",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VitScoreResult {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub variant: Pooling,
}

/// `n × m` cosine similarities, clamped to `[-1, 1]` against rounding.
pub fn similarity_matrix(fa: &FeatureMatrix, fb: &FeatureMatrix) -> Result<Vec<f64>> {
    if fa.dim != fb.dim {
        return Err(Error::Shape { op: "vitscore", left: vec![fa.n, fa.dim], right: vec![fb.n, fb.dim] });
    }
    let mut sims = Vec::with_capacity(fa.n * fb.n);
    for a in fa.rows() {
        for b in fb.rows() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            sims.push(dot.clamp(-1.0, 1.0));
        }
    }
    Ok(sims)
}

/// Greedy-matched recall, precision and F1.
pub fn vitscore(fa: &FeatureMatrix, fb: &FeatureMatrix) -> Result<VitScoreResult> {
    let sims = similarity_matrix(fa, fb)?;
    let (n, m) = (fa.n, fb.n);
    let mut row_max = vec![f64::NEG_INFINITY; n];
    let mut col_max = vec![f64::NEG_INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            let s = sims[i * m + j];
            row_max[i] = row_max[i].max(s);
            col_max[j] = col_max[j].max(s);
        }
    }
    let recall = row_max.iter().sum::<f64>() / n as f64;
    let precision = col_max.iter().sum::<f64>() / m as f64;
    let denom = recall + precision;
    if denom == 0.0 {
        return Err(Error::UndefinedF1);
    }
    Ok(VitScoreResult { recall, precision, f1: 2.0 * recall * precision / denom, variant: Pooling::Origin })
}

/// Mean-pooling ablation: `R = P = F1 = 1/(nm) Σ_i Σ_j a_iᵀ b_j`.
pub fn vitscore_mean(fa: &FeatureMatrix, fb: &FeatureMatrix) -> Result<VitScoreResult> {
    let sims = similarity_matrix(fa, fb)?;
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    Ok(VitScoreResult { recall: mean, precision: mean, f1: mean, variant: Pooling::MeanPooling })
}

pub fn score_features(fa: &FeatureMatrix, fb: &FeatureMatrix, pooling: Pooling) -> Result<VitScoreResult> {
    match pooling {
        Pooling::Origin => vitscore(fa, fb),
        Pooling::MeanPooling => vitscore_mean(fa, fb),
    }
}

/// Encodes both images and scores them.
pub fn score_pair(a: &Image, b: &Image, weights: &WeightBundle) -> Result<VitScoreResult> {
    let encoder = Encoder::new(weights)?;
    let fa = encoder.encode(a)?;
    let fb = encoder.encode(b)?;
    vitscore(&fa, &fb)
}

/// [`score_pair`] with a choice of pooling.
pub fn score_pair_with(a: &Image, b: &Image, weights: &WeightBundle, pooling: Pooling) -> Result<VitScoreResult> {
    let fa = encode(a, weights)?;
    let fb = encode(b, weights)?;
    score_features(&fa, &fb, pooling)
}
