//! Center-normalize transform and centering policies.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};

/// Inputs closer than this to the center are rejected.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// `(z - mu) / ||z - mu||`.
pub fn center_normalize(z: ArrayView1<'_, f64>, mu: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if z.len() != mu.len() {
        return Err(Error::Shape(format!("vector has dimension {}, center has {}", z.len(), mu.len())));
    }
    let d = &z - &mu;
    let norm = d.dot(&d).sqrt();
    if !norm.is_finite() {
        return Err(Error::InvalidArgument("non-finite input to center_normalize".into()));
    }
    if norm < DEGENERATE_EPS {
        return Err(Error::Degenerate { norm });
    }
    Ok(d / norm)
}

/// Row-wise [`center_normalize`].
pub fn center_normalize_rows(m: &Array2<f64>, mu: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(m.raw_dim());
    for (src, mut dst) in m.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&center_normalize(src, mu)?);
    }
    Ok(out)
}

/// Mean over the union of support and query vectors.
pub fn task_mean(episode: &Episode) -> Array1<f64> {
    let n = (episode.n_support() + episode.n_query()) as f64;
    let sum = episode.support_vectors.sum_axis(Axis(0)) + episode.query_vectors.sum_axis(Axis(0));
    sum / n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenteringKind {
    None,
    Base,
    Task,
}

impl std::str::FromStr for CenteringKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CenteringKind::None),
            "base" => Ok(CenteringKind::Base),
            "task" => Ok(CenteringKind::Task),
            other => Err(Error::Config(format!("unknown centering {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenteringPolicy {
    pub kind: CenteringKind,
    /// Precomputed center for `Base`; ignored otherwise.
    pub mu: Option<Array1<f64>>,
}

impl CenteringPolicy {
    pub fn none() -> Self {
        Self { kind: CenteringKind::None, mu: None }
    }

    pub fn base(mu: Array1<f64>) -> Self {
        Self { kind: CenteringKind::Base, mu: Some(mu) }
    }

    pub fn task() -> Self {
        Self { kind: CenteringKind::Task, mu: None }
    }

    /// Concrete center for `episode`.
    pub fn resolve(&self, episode: &Episode) -> Result<Array1<f64>> {
        let mu = match self.kind {
            CenteringKind::None => Array1::zeros(episode.dim()),
            CenteringKind::Task => task_mean(episode),
            CenteringKind::Base => {
                self.mu.clone().ok_or_else(|| Error::Config("base centering needs a precomputed mean".into()))?
            }
        };
        if mu.len() != episode.dim() {
            return Err(Error::Shape(format!("center has dimension {}, episode has {}", mu.len(), episode.dim())));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite centering vector".into()));
        }
        Ok(mu)
    }
}
