//! Per-query predictions shared by every method, plus softmax and entropy
//! helpers.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p log p` is taken as zero below this probability.
pub const PLOGP_FLOOR: f64 = 1e-30;

pub(crate) fn plogp(p: f64) -> f64 {
    if p < PLOGP_FLOOR {
        0.0
    } else {
        p * p.ln()
    }
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: ArrayView1<'_, f64>) -> f64 {
    -p.iter().map(|&x| plogp(x)).sum::<f64>()
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|l| (l - max).exp());
    let z = out.sum();
    out /= z;
    out
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (src, mut dst) in logits.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&softmax(src));
    }
    out
}

/// Index of the first maximum.
pub(crate) fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Probabilities over `K` (closed-set) or `K + 1` (with an outlier column)
/// outcomes, an outlierness score and a closed-set prediction per query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSheet {
    pub n_way: usize,
    pub probs: Array2<f64>,
    pub outlier_score: Vec<f64>,
    pub closed_pred: Vec<usize>,
}

impl PredictionSheet {
    /// Sheet whose outlier score is `-max_k p_ik`.
    pub fn closed_set(probs: Array2<f64>) -> Self {
        let n_way = probs.ncols();
        let outlier_score = probs.outer_iter().map(|r| -r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let closed_pred = probs.outer_iter().map(argmax).collect();
        Self { n_way, probs, outlier_score, closed_pred }
    }

    /// Sheet over `K + 1` outcomes whose outlier score is the last column.
    pub fn open_set(probs: Array2<f64>) -> Self {
        let n_way = probs.ncols() - 1;
        let outlier_score = probs.column(n_way).to_vec();
        let closed_pred = probs.outer_iter().map(|r| argmax(r.slice(ndarray::s![..n_way]))).collect();
        Self { n_way, probs, outlier_score, closed_pred }
    }

    pub fn n_query(&self) -> usize {
        self.probs.nrows()
    }

    pub fn has_outlier_column(&self) -> bool {
        self.probs.ncols() == self.n_way + 1
    }

    pub fn check(&self) -> Result<()> {
        for (i, row) in self.probs.outer_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {i} does not sum to 1")));
            }
        }
        if self.outlier_score.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite outlier score".into()));
        }
        Ok(())
    }
}

/// Entropy of the renormalized first-`K`-column distribution of each query.
pub fn closed_set_entropy(sheet: &PredictionSheet) -> Vec<f64> {
    sheet
        .probs
        .outer_iter()
        .map(|row| {
            let closed = row.slice(ndarray::s![..sheet.n_way]);
            let z = closed.sum();
            entropy((&closed / z).view())
        })
        .collect()
}
