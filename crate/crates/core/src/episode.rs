//! Open-set episode sampling.
//!
//! Each episode is a pure function of `(seed, episode_index)`. The generator
//! is ChaCha8 keyed with the little-endian bytes of `seed` (remaining key
//! bytes zero) and with its stream id set to `episode_index`, so episodes can
//! be produced independently and in any order.
//!
//! Within an episode: classes of the split are partially shuffled and the
//! first `n_way` become closed-set, the next `n_open_classes` open-set. Then,
//! class by class in that order, instances are partially shuffled; for a
//! closed-set class the first `n_shot` go to the support set and the next
//! `n_query_per_class` to the query set.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Split};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub n_shot: usize,
    pub n_query_per_class: usize,
    pub n_open_classes: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self { n_way: 5, n_shot: 1, n_query_per_class: 15, n_open_classes: 5, seed: 0 }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::Config(format!("n_way must be >= 2, got {}", self.n_way)));
        }
        if self.n_shot == 0 || self.n_query_per_class == 0 {
            return Err(Error::Config("n_shot and n_query_per_class must be positive".into()));
        }
        if self.n_open_classes == 0 {
            return Err(Error::Config("n_open_classes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_support(&self) -> usize {
        self.n_way * self.n_shot
    }

    pub fn n_query(&self) -> usize {
        (self.n_way + self.n_open_classes) * self.n_query_per_class
    }
}

/// Ground truth of a query: a closed-set slot in `[0, K)` or an outlier.
///
/// Serialized as the slot number, or `null` for an outlier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<usize>", into = "Option<usize>")]
pub enum QueryTruth {
    Inlier(usize),
    Outlier,
}

impl QueryTruth {
    pub fn is_outlier(self) -> bool {
        matches!(self, QueryTruth::Outlier)
    }

    pub fn label(self) -> Option<usize> {
        match self {
            QueryTruth::Inlier(k) => Some(k),
            QueryTruth::Outlier => None,
        }
    }
}

impl From<Option<usize>> for QueryTruth {
    fn from(v: Option<usize>) -> Self {
        v.map_or(QueryTruth::Outlier, QueryTruth::Inlier)
    }
}

impl From<QueryTruth> for Option<usize> {
    fn from(t: QueryTruth) -> Self {
        t.label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub index: u64,
    pub n_way: usize,
    pub support_vectors: Array2<f64>,
    pub support_labels: Vec<usize>,
    pub query_vectors: Array2<f64>,
    pub query_truth: Vec<QueryTruth>,
    /// Source class id of each closed-set slot.
    pub closed_classes: Vec<usize>,
    pub open_classes: Vec<usize>,
    /// Store instance indices, parallel to the support / query rows.
    pub support_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
}

impl Episode {
    /// Assembles an episode from raw parts, checking shapes.
    pub fn from_parts(
        n_way: usize,
        support_vectors: Array2<f64>,
        support_labels: Vec<usize>,
        query_vectors: Array2<f64>,
        query_truth: Vec<QueryTruth>,
    ) -> Result<Self> {
        if n_way < 2 {
            return Err(Error::Shape(format!("n_way must be >= 2, got {n_way}")));
        }
        if support_vectors.nrows() != support_labels.len() || query_vectors.nrows() != query_truth.len() {
            return Err(Error::Shape("row count does not match label count".into()));
        }
        if support_vectors.ncols() != query_vectors.ncols() {
            return Err(Error::Shape("support and query dimensions differ".into()));
        }
        if query_vectors.nrows() == 0 {
            return Err(Error::Shape("empty query set".into()));
        }
        for k in 0..n_way {
            if !support_labels.contains(&k) {
                return Err(Error::Shape(format!("no support vector for class {k}")));
            }
        }
        if support_labels.iter().any(|&l| l >= n_way)
            || query_truth.iter().any(|t| t.label().is_some_and(|l| l >= n_way))
        {
            return Err(Error::Shape("label out of range".into()));
        }
        let ns = support_labels.len();
        let nq = query_truth.len();
        Ok(Self {
            index: 0,
            n_way,
            support_vectors,
            support_labels,
            query_vectors,
            query_truth,
            closed_classes: (0..n_way).collect(),
            open_classes: Vec::new(),
            support_indices: (0..ns).collect(),
            query_indices: (ns..ns + nq).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.support_vectors.nrows()
    }

    pub fn n_query(&self) -> usize {
        self.query_vectors.nrows()
    }

    pub fn is_outlier(&self) -> Vec<bool> {
        self.query_truth.iter().map(|t| t.is_outlier()).collect()
    }

    /// CRC32 over the instance indices and vector bits; used to check that
    /// several methods were fed the same episode.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&self.index.to_le_bytes());
        for &i in self.support_indices.iter().chain(&self.query_indices) {
            h.update(&(i as u64).to_le_bytes());
        }
        for &l in &self.support_labels {
            h.update(&(l as u64).to_le_bytes());
        }
        for t in &self.query_truth {
            h.update(&t.label().map_or(u64::MAX, |l| l as u64).to_le_bytes());
        }
        for v in self.support_vectors.iter().chain(self.query_vectors.iter()) {
            h.update(&v.to_bits().to_le_bytes());
        }
        h.finalize()
    }
}

pub fn episode_rng(seed: u64, episode_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(episode_index);
    rng
}

/// Samples episode `episode_index` from the test split.
pub fn sample_episode(fs: &FeatureSet, spec: &EpisodeSpec, episode_index: u64) -> Result<Episode> {
    sample_episode_from(fs, Split::Test, spec, episode_index)
}

pub fn sample_episode_from(fs: &FeatureSet, split: Split, spec: &EpisodeSpec, episode_index: u64) -> Result<Episode> {
    spec.validate()?;
    let mut classes = fs.classes_in(split);
    let n_classes = spec.n_way + spec.n_open_classes;
    if classes.len() < n_classes {
        return Err(Error::InsufficientData(format!(
            "{} split has {} classes, episode needs {}",
            split.as_str(),
            classes.len(),
            n_classes
        )));
    }

    let mut rng = episode_rng(spec.seed, episode_index);
    let (chosen, _) = classes.partial_shuffle(&mut rng, n_classes);
    let chosen = chosen.to_vec();
    let (closed, open) = chosen.split_at(spec.n_way);

    let dim = fs.dim();
    let mut support_indices = Vec::with_capacity(spec.n_support());
    let mut support_labels = Vec::with_capacity(spec.n_support());
    let mut query_indices = Vec::with_capacity(spec.n_query());
    let mut query_truth = Vec::with_capacity(spec.n_query());

    for (slot, &class) in chosen.iter().enumerate() {
        let is_closed = slot < spec.n_way;
        let take = if is_closed { spec.n_shot + spec.n_query_per_class } else { spec.n_query_per_class };
        let mut members = fs.members(class).to_vec();
        if members.len() < take {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} instances, episode needs {take}",
                members.len()
            )));
        }
        let (picked, _) = members.partial_shuffle(&mut rng, take);
        if is_closed {
            let (shots, queries) = picked.split_at(spec.n_shot);
            support_indices.extend_from_slice(shots);
            support_labels.extend(std::iter::repeat_n(slot, spec.n_shot));
            query_indices.extend_from_slice(queries);
            query_truth.extend(std::iter::repeat_n(QueryTruth::Inlier(slot), queries.len()));
        } else {
            query_indices.extend_from_slice(picked);
            query_truth.extend(std::iter::repeat_n(QueryTruth::Outlier, picked.len()));
        }
    }

    let gather = |idx: &[usize]| Array2::from_shape_fn((idx.len(), dim), |(r, c)| f64::from(fs.vectors()[[idx[r], c]]));
    Ok(Episode {
        index: episode_index,
        n_way: spec.n_way,
        support_vectors: gather(&support_indices),
        support_labels,
        query_vectors: gather(&query_indices),
        query_truth,
        closed_classes: closed.to_vec(),
        open_classes: open.to_vec(),
        support_indices,
        query_indices,
    })
}
