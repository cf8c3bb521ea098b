//! Deterministic Gaussian-mixture feature stores.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub base: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { base: 0.0, val: 0.0, test: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub points_per_class: usize,
    pub centroid_radius: f64,
    pub within_std: f64,
    /// Offset of the whole mixture; zeros when omitted.
    #[serde(default)]
    pub global_shift: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Fractions of classes assigned to each split.
    #[serde(default)]
    pub split_fractions: SplitFractions,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_classes == 0 || self.points_per_class == 0 {
            return Err(Error::Config("dim, n_classes and points_per_class must be positive".into()));
        }
        if !(self.centroid_radius > 0.0 && self.centroid_radius.is_finite()) {
            return Err(Error::Config("centroid_radius must be positive".into()));
        }
        if !(self.within_std >= 0.0 && self.within_std.is_finite()) {
            return Err(Error::Config("within_std must be non-negative".into()));
        }
        if let Some(shift) = &self.global_shift {
            if shift.len() != self.dim || shift.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("global_shift must be a finite vector of length dim".into()));
            }
        }
        let f = &self.split_fractions;
        let fr = [f.base, f.val, f.test];
        if fr.iter().any(|v| !(0.0..=1.0).contains(v)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to 1".into()));
        }
        Ok(())
    }

    /// Split of each class: the first `round(base * C)` classes are base,
    /// the next `round(val * C)` validation, the rest test.
    fn split_assignment(&self) -> Vec<Split> {
        let c = self.n_classes;
        let n_base = ((self.split_fractions.base * c as f64).round() as usize).min(c);
        let n_val = ((self.split_fractions.val * c as f64).round() as usize).min(c - n_base);
        (0..c)
            .map(|k| {
                if k < n_base {
                    Split::Base
                } else if k < n_base + n_val {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect()
    }
}

/// Centroids at distance `centroid_radius` from `global_shift` along
/// uniformly random directions; points are centroid plus isotropic
/// Gaussian noise of standard deviation `within_std`.
pub fn generate(spec: &SynthSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&spec.seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let dim = spec.dim;
    let shift = spec.global_shift.clone().unwrap_or_else(|| vec![0.0; dim]);

    let mut centroids = Array2::<f64>::zeros((spec.n_classes, dim));
    for mut c in centroids.outer_iter_mut() {
        loop {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for j in 0..dim {
                    c[j] = shift[j] + spec.centroid_radius * dir[j] / norm;
                }
                break;
            }
        }
    }

    let n = spec.n_classes * spec.points_per_class;
    let mut vectors = Array2::<f32>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in vectors.outer_iter_mut().enumerate() {
        let k = i / spec.points_per_class;
        labels.push(k as u32);
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            row[j] = (centroids[[k, j]] + spec.within_std * noise) as f32;
        }
    }
    let names = (0..spec.n_classes).map(|k| format!("synth_{k:03}")).collect();
    FeatureSet::new(vectors, labels, names, spec.split_assignment())
}
