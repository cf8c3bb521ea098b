//! Closed-set accuracy and outlier-detection metrics, with outliers as the
//! positive class, plus aggregation over episodes.
//!
//! Ties: AUROC uses midranks; the precision-recall sweeps treat all queries
//! sharing a score as one block.

use serde::{Deserialize, Serialize};

use crate::episode::QueryTruth;
use crate::error::{Error, Result};
use crate::prediction::PredictionSheet;

/// Fraction of inlier queries whose closed-set prediction is correct.
pub fn accuracy(sheet: &PredictionSheet, truth: &[QueryTruth]) -> Result<f64> {
    if sheet.closed_pred.len() != truth.len() {
        return Err(Error::Shape("prediction and truth lengths differ".into()));
    }
    let (mut hits, mut n) = (0usize, 0usize);
    for (&pred, t) in sheet.closed_pred.iter().zip(truth) {
        if let QueryTruth::Inlier(label) = *t {
            n += 1;
            hits += usize::from(pred == label);
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("accuracy needs at least one inlier query".into()));
    }
    Ok(hits as f64 / n as f64)
}

fn check_inputs(scores: &[f64], is_outlier: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != is_outlier.len() {
        return Err(Error::Shape("score and label lengths differ".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = is_outlier.iter().filter(|&&o| o).count();
    Ok((pos, scores.len() - pos))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// `(true positives, false positives)` after each block of equal scores,
/// walking from the highest score down.
fn tie_blocks(scores: &[f64], is_outlier: &[bool]) -> Vec<(usize, usize)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_outlier[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Mann-Whitney estimate of P(outlier score > inlier score) + P(tie)/2.
pub fn auroc(scores: &[f64], is_outlier: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, is_outlier)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUROC needs both inliers and outliers".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if is_outlier[idx] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-interpolated average precision: sum over score blocks of
/// `delta recall * precision`.
pub fn aupr(scores: &[f64], is_outlier: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, is_outlier)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("AUPR needs at least one outlier".into()));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in tie_blocks(scores, is_outlier) {
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best precision among thresholds whose recall is at least `target_recall`.
pub fn precision_at_recall(scores: &[f64], is_outlier: &[bool], target_recall: f64) -> Result<f64> {
    let (pos, _) = check_inputs(scores, is_outlier)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("precision at recall needs at least one outlier".into()));
    }
    if !(0.0..=1.0).contains(&target_recall) {
        return Err(Error::InvalidArgument(format!("target recall {target_recall} not in [0, 1]")));
    }
    let best = tie_blocks(scores, is_outlier)
        .into_iter()
        .filter(|&(tp, _)| tp as f64 / pos as f64 >= target_recall)
        .map(|(tp, fp)| tp as f64 / (tp + fp) as f64)
        .fold(0.0, f64::max);
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    /// `None` for detectors that make no closed-set prediction.
    pub acc: Option<f64>,
    pub auroc: f64,
    pub aupr: f64,
    pub prec_at_90: f64,
}

impl EpisodeReport {
    /// Scores an outlierness vector (and, if given, closed-set predictions).
    pub fn score(sheet: Option<&PredictionSheet>, outlier_score: &[f64], truth: &[QueryTruth]) -> Result<Self> {
        let is_outlier: Vec<bool> = truth.iter().map(|t| t.is_outlier()).collect();
        Ok(Self {
            acc: sheet.map(|s| accuracy(s, truth)).transpose()?,
            auroc: auroc(outlier_score, &is_outlier)?,
            aupr: aupr(outlier_score, &is_outlier)?,
            prec_at_90: precision_at_recall(outlier_score, &is_outlier, 0.9)?,
        })
    }

    pub fn from_sheet(sheet: &PredictionSheet, truth: &[QueryTruth]) -> Result<Self> {
        Self::score(Some(sheet), &sheet.outlier_score, truth)
    }
}

/// Mean, sample standard deviation and 95% normal half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot summarise zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { mean, std, ci95: 1.96 * std / n.sqrt() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_episodes: usize,
    pub acc: Option<Summary>,
    pub auroc: Summary,
    pub aupr: Summary,
    pub prec_at_90: Summary,
}

pub fn aggregate(reports: &[EpisodeReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero episode reports".into()));
    }
    let col = |f: fn(&EpisodeReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let accs: Option<Vec<f64>> = reports.iter().map(|r| r.acc).collect();
    Ok(Aggregate {
        n_episodes: reports.len(),
        acc: accs.map(|a| Summary::of(&a)).transpose()?,
        auroc: Summary::of(&col(|r| r.auroc))?,
        aupr: Summary::of(&col(|r| r.aupr))?,
        prec_at_90: Summary::of(&col(|r| r.prec_at_90))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Exhaustive pair count.
    fn auroc_oracle(s: &[f64], y: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    /// (recall, precision) for "score >= t" at every distinct threshold, high to low.
    fn sweep(s: &[f64], y: &[bool]) -> Vec<(f64, f64)> {
        let mut ts: Vec<f64> = s.to_vec();
        ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ts.dedup();
        let pos = y.iter().filter(|&&v| v).count() as f64;
        ts.iter()
            .map(|&t| {
                let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i]).count() as f64;
                let all = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
                (tp / pos, tp / all)
            })
            .collect()
    }

    fn aupr_oracle(s: &[f64], y: &[bool]) -> f64 {
        let mut prev = 0.0;
        let mut ap = 0.0;
        for (r, p) in sweep(s, y) {
            ap += (r - prev) * p;
            prev = r;
        }
        ap
    }

    fn prec_oracle(s: &[f64], y: &[bool], target: f64) -> f64 {
        sweep(s, y).into_iter().filter(|&(r, _)| r >= target).map(|(_, p)| p).fold(0.0, f64::max)
    }

    #[test]
    fn accuracy_cases() {
        use ndarray::array;
        let sheet = PredictionSheet::closed_set(array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7], [0.5, 0.5]]);
        let truth = [
            QueryTruth::Inlier(0),
            QueryTruth::Inlier(1),
            QueryTruth::Inlier(1),
            QueryTruth::Inlier(1),
            QueryTruth::Outlier,
        ];
        assert_eq!(accuracy(&sheet, &truth).unwrap(), 0.75);
        let perfect = [
            QueryTruth::Inlier(0),
            QueryTruth::Inlier(1),
            QueryTruth::Outlier,
            QueryTruth::Outlier,
            QueryTruth::Outlier,
        ];
        assert_eq!(accuracy(&sheet, &perfect).unwrap(), 1.0);
        assert!(accuracy(&sheet, &[QueryTruth::Outlier; 5]).is_err());
    }

    #[test]
    fn accuracy_at_chance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let k = 5;
        let n = 20_000;
        let probs = ndarray::Array2::from_shape_fn((n, k), |_| rng.random::<f64>());
        let sheet = PredictionSheet::closed_set(probs);
        let truth: Vec<_> = (0..n).map(|_| QueryTruth::Inlier(rng.random_range(0..k))).collect();
        assert!((accuracy(&sheet, &truth).unwrap() - 0.2).abs() < 0.015);
    }

    #[test]
    fn perfect_and_constant() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let y = [false, false, true, true];
        assert_eq!(auroc(&s, &y).unwrap(), 1.0);
        assert_eq!(aupr(&s, &y).unwrap(), 1.0);
        assert_eq!(precision_at_recall(&s, &y, 0.9).unwrap(), 1.0);

        let c = [0.3; 6];
        let y = [true, false, false, true, false, false];
        assert_eq!(auroc(&c, &y).unwrap(), 0.5);
        assert!((aupr(&c, &y).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((precision_at_recall(&c, &y, 0.9).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hand_cases_match_oracles() {
        let s = [0.9, 0.4, 0.4, 0.7, 0.1, 0.4];
        let y = [true, false, true, false, false, true];
        assert_eq!(auroc(&s, &y).unwrap(), auroc_oracle(&s, &y));
        // 6-point case by hand: pairs (pos, neg): 0.9 beats all 3 -> 3;
        // 0.4 vs {0.4 tie, 0.7 loses, 0.1 wins} -> 1.5, twice -> 3. Total 6/9.
        assert!((auroc(&s, &y).unwrap() - 6.0 / 9.0).abs() < 1e-15);

        let s5 = [0.5, 0.3, 0.9, 0.3, 0.1];
        let y5 = [true, false, false, true, true];
        assert!((aupr(&s5, &y5).unwrap() - aupr_oracle(&s5, &y5)).abs() < 1e-15);

        let s10 = [0.05, 0.6, 0.6, 0.2, 0.9, 0.35, 0.8, 0.1, 0.6, 0.45];
        let y10 = [false, true, false, true, true, false, true, false, true, false];
        assert_eq!(precision_at_recall(&s10, &y10, 0.9).unwrap(), prec_oracle(&s10, &y10, 0.9));
    }

    #[test]
    fn errors_on_degenerate_labels() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(aupr(&[0.1, 0.2], &[false, false]).is_err());
        assert!(precision_at_recall(&[0.1], &[false], 0.9).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_cases() {
        let r = EpisodeReport { acc: Some(0.5), auroc: 0.7, aupr: 0.6, prec_at_90: 0.55 };
        let a = aggregate(&[r]).unwrap();
        assert_eq!(a.auroc.mean, 0.7);
        assert_eq!(a.auroc.ci95, 0.0);
        let a = aggregate(&[r, r]).unwrap();
        assert_eq!(a.acc.unwrap().ci95, 0.0);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let reports: Vec<_> = (0..100)
            .map(|_| EpisodeReport {
                acc: Some(rng.random()),
                auroc: rng.random(),
                aupr: rng.random(),
                prec_at_90: rng.random(),
            })
            .collect();
        let a = aggregate(&reports).unwrap();
        let xs: Vec<f64> = reports.iter().map(|r| r.aupr).collect();
        let mut m = 0.0;
        for x in &xs {
            m += x;
        }
        m /= 100.0;
        let mut v = 0.0;
        for x in &xs {
            v += (x - m) * (x - m);
        }
        let sd = (v / 99.0).sqrt();
        assert!((a.aupr.mean - m).abs() < 1e-12);
        assert!((a.aupr.std - sd).abs() < 1e-12);
        assert!((a.aupr.ci95 - 1.96 * sd / 10.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_match_oracles_with_ties(
            data in prop::collection::vec((0u8..6, any::<bool>()), 2..25)
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            let pos = y.iter().filter(|&&v| v).count();
            prop_assume!(pos > 0);
            prop_assert!((aupr(&s, &y).unwrap() - aupr_oracle(&s, &y)).abs() < 1e-12);
            prop_assert_eq!(precision_at_recall(&s, &y, 0.9).unwrap(), prec_oracle(&s, &y, 0.9));
            if pos < y.len() {
                let a = auroc(&s, &y).unwrap();
                prop_assert!((a - auroc_oracle(&s, &y)).abs() < 1e-12);
                let neg: Vec<f64> = s.iter().map(|v| -v).collect();
                prop_assert!((auroc(&neg, &y).unwrap() - (1.0 - a)).abs() < 1e-12);
                let ap = aupr(&s, &y).unwrap();
                prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&ap));
            }
        }

        #[test]
        fn metrics_invariant_to_increasing_transform(
            data in prop::collection::vec((-50i32..50, any::<bool>()), 2..30)
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64 / 10.0).collect();
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            let pos = y.iter().filter(|&&v| v).count();
            prop_assume!(pos > 0 && pos < y.len());
            prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
            prop_assert_eq!(aupr(&s, &y).unwrap(), aupr(&t, &y).unwrap());
            prop_assert_eq!(precision_at_recall(&s, &y, 0.9).unwrap(), precision_at_recall(&t, &y, 0.9).unwrap());
        }
    }
}
