//! Inductive baselines: nearest-centroid classification on center-normalized
//! features, and a k-nearest-neighbor outlier detector. Together they form
//! the "strong baseline".

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::prediction::{softmax_rows, PredictionSheet};
use crate::transforms::{center_normalize, center_normalize_rows, CenteringKind, CenteringPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub knn_k: usize,
    pub temperature: f64,
    /// Overrides the inductive default (base centering).
    pub centering: Option<CenteringKind>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { knn_k: 1, temperature: 10.0, centering: None }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("baseline.knn_k must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("baseline.temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Re-normalized centroids of center-normalized support features, one row
/// per class.
pub(crate) fn normalized_centroids(support: &Array2<f64>, labels: &[usize], n_way: usize) -> Result<Array2<f64>> {
    let mut sums = Array2::<f64>::zeros((n_way, support.ncols()));
    for (row, &l) in support.outer_iter().zip(labels) {
        let mut s = sums.row_mut(l);
        s += &row;
    }
    let zero = ndarray::Array1::zeros(support.ncols());
    let mut out = Array2::zeros(sums.raw_dim());
    for (k, s) in sums.outer_iter().enumerate() {
        out.row_mut(k).assign(&center_normalize(s, zero.view())?);
    }
    Ok(out)
}

/// Softmax over temperature-scaled cosine similarities to class centroids;
/// outlierness is the negative maximum probability.
pub fn simpleshot_classify(episode: &Episode, policy: &CenteringPolicy, temperature: f64) -> Result<PredictionSheet> {
    let mu = policy.resolve(episode)?;
    let support = center_normalize_rows(&episode.support_vectors, mu.view())?;
    let query = center_normalize_rows(&episode.query_vectors, mu.view())?;
    let centroids = normalized_centroids(&support, &episode.support_labels, episode.n_way)?;
    let logits = query.dot(&centroids.t()) * temperature;
    Ok(PredictionSheet::closed_set(softmax_rows(&logits)))
}

/// Mean Euclidean distance from each center-normalized query to its `k`
/// nearest center-normalized support vectors. Higher is more outlying.
pub fn knn_outlier_score(episode: &Episode, policy: &CenteringPolicy, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > episode.n_support() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for {} support vectors",
            episode.n_support()
        )));
    }
    let mu = policy.resolve(episode)?;
    let support = center_normalize_rows(&episode.support_vectors, mu.view())?;
    let query = center_normalize_rows(&episode.query_vectors, mu.view())?;
    let mut dists = Vec::with_capacity(support.nrows());
    Ok(query
        .axis_iter(Axis(0))
        .map(|q| {
            dists.clear();
            dists.extend(
                support
                    .outer_iter()
                    .map(|s| q.iter().zip(s.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
            );
            dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            let mut head = dists[..k].to_vec();
            // Fixed summation order regardless of selection order.
            head.sort_by(f64::total_cmp);
            head.iter().sum::<f64>() / k as f64
        })
        .collect())
}
