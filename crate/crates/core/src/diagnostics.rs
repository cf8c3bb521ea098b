//! Dataset-level difficulty measures: the mean imposture factor (MIF) and the
//! intra/inter-class variance ratio.
//!
//! The variance ratio is the mean over classes of the trace of the
//! within-class (population) covariance, divided by the trace of the
//! population covariance of the class centroids.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Split};

fn dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fraction of `class_vectors` lying strictly farther from `centroid` than `z`.
pub fn imposture_factor(
    z: ArrayView1<'_, f64>,
    class_vectors: ArrayView2<'_, f64>,
    centroid: ArrayView1<'_, f64>,
) -> Result<f64> {
    if class_vectors.nrows() == 0 {
        return Err(Error::InvalidArgument("imposture factor of an empty class".into()));
    }
    let dz = dist(z, centroid);
    let farther = class_vectors.outer_iter().filter(|m| dist(*m, centroid) > dz).count();
    Ok(farther as f64 / class_vectors.nrows() as f64)
}

/// Per-class centroids; labels must be dense in `[0, C)`.
fn centroids(vectors: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
    if vectors.nrows() != labels.len() {
        return Err(Error::Shape("vector and label counts differ".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    if n_classes < 2 {
        return Err(Error::InsufficientData("need at least two classes".into()));
    }
    let mut sums = Array2::<f64>::zeros((n_classes, vectors.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &l) in vectors.outer_iter().zip(labels) {
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    for (mut s, &c) in sums.outer_iter_mut().zip(&counts) {
        s /= c as f64;
    }
    Ok((sums, counts))
}

/// Mean IF of outsiders against each class, and the MIF (their average).
pub fn imposture_by_class(vectors: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (cents, _) = centroids(vectors, labels)?;
    let per_class: Vec<f64> = (0..cents.nrows())
        .map(|k| {
            let c = cents.row(k);
            let mut member_d: Vec<f64> = Vec::new();
            let mut outsider_d: Vec<f64> = Vec::new();
            for (row, &l) in vectors.outer_iter().zip(labels) {
                if l == k {
                    member_d.push(dist(row, c));
                } else {
                    outsider_d.push(dist(row, c));
                }
            }
            member_d.sort_by(f64::total_cmp);
            let m = member_d.len() as f64;
            // Count of members strictly farther than d = m - #(member <= d).
            let total: f64 = outsider_d
                .iter()
                .map(|&d| {
                    let not_farther = member_d.partition_point(|&x| x <= d);
                    (member_d.len() - not_farther) as f64 / m
                })
                .sum();
            total / outsider_d.len() as f64
        })
        .collect();
    let mif = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((mif, per_class))
}

pub fn mean_imposture_factor(vectors: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    Ok(imposture_by_class(vectors, labels)?.0)
}

pub fn variance_ratio(vectors: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let (cents, counts) = centroids(vectors, labels)?;
    let mut intra = vec![0.0; cents.nrows()];
    for (row, &l) in vectors.outer_iter().zip(labels) {
        let d = dist(row, cents.row(l));
        intra[l] += d * d;
    }
    let intra = intra.iter().zip(&counts).map(|(s, &c)| s / c as f64).sum::<f64>() / cents.nrows() as f64;
    let grand: Array1<f64> = cents.mean_axis(Axis(0)).expect("at least two classes");
    let inter = cents.outer_iter().map(|c| dist(c, grand.view()).powi(2)).sum::<f64>() / cents.nrows() as f64;
    if inter <= 0.0 {
        return Err(Error::InvalidArgument("all class centroids coincide".into()));
    }
    Ok(intra / inter)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub split: Split,
    pub n_classes: usize,
    pub n_vectors: usize,
    pub mif: f64,
    pub mif_percent: f64,
    pub rho: f64,
    /// Class name to the mean IF of outsiders against that class.
    pub per_class_if: BTreeMap<String, f64>,
}

pub fn diagnose(fs: &FeatureSet, split: Split) -> Result<DiagnosticReport> {
    let (vectors, labels) = fs.split_view(split);
    let classes = fs.classes_in(split);
    let (mif, per_class) = imposture_by_class(vectors.view(), &labels)?;
    let rho = variance_ratio(vectors.view(), &labels)?;
    let per_class_if = classes.iter().zip(per_class).map(|(&c, v)| (fs.class_names()[c].clone(), v)).collect();
    Ok(DiagnosticReport {
        split,
        n_classes: classes.len(),
        n_vectors: labels.len(),
        mif,
        mif_percent: 100.0 * mif,
        rho,
        per_class_if,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn imposture_factor_cases() {
        let members = array![[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0], [0.0, -4.0], [5.0, 0.0]];
        let c = array![0.0, 0.0];
        assert_eq!(imposture_factor(array![10.0, 0.0].view(), members.view(), c.view()).unwrap(), 0.0);
        assert_eq!(imposture_factor(array![0.5, 0.0].view(), members.view(), c.view()).unwrap(), 1.0);
        // At the median distance (3): only 4 and 5 are strictly farther.
        assert_eq!(imposture_factor(array![0.0, 3.0].view(), members.view(), c.view()).unwrap(), 0.4);
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(imposture_factor(c.view(), empty.view(), c.view()).is_err());
    }

    #[test]
    fn separated_clusters_have_zero_mif() {
        let v = array![[0.0, 0.1], [0.1, 0.0], [100.0, 0.0], [100.1, 0.1]];
        assert_eq!(mean_imposture_factor(v.view(), &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(mean_imposture_factor(v.view(), &[0, 0, 0, 0]).is_err());
    }

    fn mif_oracle(v: &Array2<f64>, labels: &[usize]) -> f64 {
        let n_classes = labels.iter().max().unwrap() + 1;
        let mut total = 0.0;
        for k in 0..n_classes {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            let mut c = vec![0.0; v.ncols()];
            for &i in &members {
                for j in 0..v.ncols() {
                    c[j] += v[[i, j]] / members.len() as f64;
                }
            }
            let d = |i: usize| (0..v.ncols()).map(|j| (v[[i, j]] - c[j]).powi(2)).sum::<f64>().sqrt();
            let outsiders: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != k).collect();
            let mut s = 0.0;
            for &z in &outsiders {
                let mut cnt = 0.0;
                for &m in &members {
                    if d(m) > d(z) {
                        cnt += 1.0;
                    }
                }
                s += cnt / members.len() as f64;
            }
            total += s / outsiders.len() as f64;
        }
        total / n_classes as f64
    }

    #[test]
    fn coincident_points_match_double_loop() {
        // Class 0 all at (0,0) except one spread point; class 1 at (4,0) with
        // one member sitting exactly on class 0's centroid.
        let v = array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [4.0, 0.0], [4.0, 0.0], [0.0, 0.0]];
        let labels = [0, 0, 0, 1, 1, 1];
        let got = mean_imposture_factor(v.view(), &labels).unwrap();
        assert!((got - mif_oracle(&v, &labels)).abs() < 1e-15);
    }

    fn mixture(seed: u64, classes: usize, per: usize, dim: usize, spread: f64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let centers = Array2::from_shape_fn((classes, dim), |_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            3.0 * x
        });
        let n = classes * per;
        let labels: Vec<usize> = (0..n).map(|i| i / per).collect();
        let v = Array2::from_shape_fn((n, dim), |(i, j)| {
            let x: f64 = StandardNormal.sample(&mut rng);
            centers[[labels[i], j]] + spread * x
        });
        (v, labels)
    }

    #[test]
    fn mif_is_one_minus_centroid_distance_auroc() {
        for seed in 0..10 {
            let (v, labels) = mixture(seed, 3, 20, 5, 2.0);
            let mif = mean_imposture_factor(v.view(), &labels).unwrap();
            assert!((mif - mif_oracle(&v, &labels)).abs() < 1e-12);
            let (cents, _) = centroids(v.view(), &labels).unwrap();
            let mut auc = 0.0;
            for k in 0..3 {
                let scores: Vec<f64> = v.outer_iter().map(|r| dist(r, cents.row(k))).collect();
                let is_out: Vec<bool> = labels.iter().map(|&l| l != k).collect();
                auc += auroc(&scores, &is_out).unwrap() / 3.0;
            }
            assert!((mif - (1.0 - auc)).abs() < 1e-9);
        }
    }

    #[test]
    fn mif_rigid_motion_invariance_and_shrinking() {
        let (v, labels) = mixture(42, 4, 15, 2, 2.5);
        let mif = mean_imposture_factor(v.view(), &labels).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let moved = Array2::from_shape_fn(v.raw_dim(), |(i, j)| {
            let (x, y) = (v[[i, 0]], v[[i, 1]]);
            if j == 0 {
                c * x - s * y + 7.0
            } else {
                s * x + c * y - 2.0
            }
        });
        assert!((mean_imposture_factor(moved.view(), &labels).unwrap() - mif).abs() < 1e-12);

        let (cents, _) = centroids(v.view(), &labels).unwrap();
        let shrunk = Array2::from_shape_fn(v.raw_dim(), |(i, j)| {
            let cj = cents[[labels[i], j]];
            cj + 0.5 * (v[[i, j]] - cj)
        });
        assert!(mean_imposture_factor(shrunk.view(), &labels).unwrap() <= mif);
    }

    #[test]
    fn variance_ratio_cases() {
        let v = array![[9.0], [11.0], [-9.0], [-11.0]];
        assert!((variance_ratio(v.view(), &[0, 0, 1, 1]).unwrap() - 0.01).abs() < 1e-15);

        let collapsed = array![[1.0, 1.0], [1.0, 1.0], [3.0, 0.0], [3.0, 0.0]];
        assert_eq!(variance_ratio(collapsed.view(), &[0, 0, 1, 1]).unwrap(), 0.0);

        let same = array![[1.0], [-1.0], [2.0], [-2.0]];
        assert!(variance_ratio(same.view(), &[0, 0, 1, 1]).is_err());
    }

    #[test]
    fn variance_ratio_matches_covariance_oracle_and_is_scale_invariant() {
        let (v, labels) = mixture(7, 3, 12, 4, 1.5);
        let rho = variance_ratio(v.view(), &labels).unwrap();
        // Oracle: per-class covariance matrices, then traces.
        let dim = 4;
        let mut cents = vec![vec![0.0; dim]; 3];
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..dim {
                cents[l][j] += v[[i, j]] / 12.0;
            }
        }
        let mut intra = 0.0;
        for k in 0..3 {
            for j in 0..dim {
                let mut cov_jj = 0.0;
                for (i, &l) in labels.iter().enumerate() {
                    if l == k {
                        cov_jj += (v[[i, j]] - cents[k][j]).powi(2) / 12.0;
                    }
                }
                intra += cov_jj / 3.0;
            }
        }
        let mut inter = 0.0;
        for j in 0..dim {
            let m = (0..3).map(|k| cents[k][j]).sum::<f64>() / 3.0;
            inter += (0..3).map(|k| (cents[k][j] - m).powi(2)).sum::<f64>() / 3.0;
        }
        assert!((rho - intra / inter).abs() < 1e-8);
        let scaled = &v * 13.5;
        assert!((variance_ratio(scaled.view(), &labels).unwrap() - rho).abs() < 1e-9);
    }
}
