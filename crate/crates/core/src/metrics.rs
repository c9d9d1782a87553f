//! Binary classification metrics for the minority (malicious) class.
//!
//! Conventions: a row is predicted malicious iff `score >= threshold`;
//! precision, recall and F1 are 0 whenever their denominator is 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_inputs(labels: &[Label], scores: &[f64]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    if labels.len() != scores.len() {
        return Err(Error::Metric(format!("{} labels but {} scores", labels.len(), scores.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("score {i} is not finite")));
    }
    Ok(())
}

pub fn confusion(labels: &[Label], scores: &[f64], threshold: f64) -> Result<Confusion> {
    check_inputs(labels, scores)?;
    let mut c = Confusion::default();
    for (l, &s) in labels.iter().zip(scores) {
        match (l.is_malicious(), s >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn classification_metrics(
    labels: &[Label],
    scores: &[f64],
    threshold: f64,
) -> Result<ClassificationMetrics> {
    let c = confusion(labels, scores, threshold)?;
    Ok(ClassificationMetrics { confusion: c, precision: c.precision(), recall: c.recall(), f1: c.f1() })
}

fn class_sizes(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_malicious()).count();
    (pos, labels.len() - pos)
}

/// ROC-AUC as the Mann-Whitney statistic: P(s+ > s-) + 0.5 P(s+ = s-).
///
/// Computed from mid-ranks, O(n log n).
pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Result<f64> {
    check_inputs(labels, scores)?;
    let (n_pos, n_neg) = class_sizes(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC undefined: only one class present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k].is_malicious() {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Score threshold; `None` for the (recall 0, precision 1) start point.
    pub threshold: Option<f64>,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Ordered by non-decreasing recall.
    pub points: Vec<PrPoint>,
    /// Trapezoidal area over recall.
    pub auc: f64,
}

impl PrCurve {
    /// Two-column `recall,precision` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.recall, p.precision));
        }
        s
    }
}

/// Precision-recall curve with one point per distinct score, plus the
/// (0, 1) start point.
pub fn pr_curve(labels: &[Label], scores: &[f64]) -> Result<PrCurve> {
    check_inputs(labels, scores)?;
    let (n_pos, n_neg) = class_sizes(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("PR curve undefined: only one class present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![PrPoint { threshold: None, recall: 0.0, precision: 1.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_malicious() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: Some(s),
            recall: tp as f64 / n_pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[1].precision + w[0].precision) / 2.0)
        .sum();
    Ok(PrCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from_bool(b == 1)).collect()
    }

    /// Counts wins and ties over every positive-negative pair.
    fn auc_by_pairs(labels: &[Label], scores: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if li.is_malicious() && !lj.is_malicious() {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn precision_recall_f1_by_hand() {
        // TP=2, FP=1, FN=1, TN=1
        let l = labels(&[1, 1, 1, 0, 0]);
        let s = [0.9, 0.8, 0.1, 0.7, 0.2];
        let m = classification_metrics(&l, &s, 0.5).unwrap();
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);

        let perfect = classification_metrics(&labels(&[1, 0]), &[0.9, 0.1], 0.5).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));

        let none = classification_metrics(&labels(&[1, 0]), &[0.1, 0.1], 0.5).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metric_errors() {
        assert!(classification_metrics(&[], &[], 0.5).is_err());
        assert!(classification_metrics(&labels(&[1]), &[0.5, 0.5], 0.5).is_err());
        let err = roc_auc(&labels(&[1, 1]), &[0.5, 0.2]).unwrap_err();
        assert!(err.to_string().contains("AUC undefined"));
        assert!(pr_curve(&labels(&[0, 0]), &[0.5, 0.2]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&labels(&[1, 1, 0, 0]), &[0.9, 0.8, 0.3, 0.2]).unwrap(), 1.0);
        assert_eq!(roc_auc(&labels(&[1, 0]), &[0.5, 0.5]).unwrap(), 0.5);
        let l = labels(&[1, 0, 1, 0]);
        let s = [0.9, 0.1, 0.4, 0.6];
        assert_eq!(auc_by_pairs(&l, &s), 0.75);
        assert_eq!(roc_auc(&l, &s).unwrap(), 0.75);
    }

    #[test]
    fn auc_matches_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..=30);
            let mut l: Vec<Label> = (0..n).map(|_| Label::from_bool(rng.random_bool(0.4))).collect();
            l[0] = Label::Malicious;
            l[1] = Label::Legitimate;
            // coarse grid forces ties
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
            let a = roc_auc(&l, &s).unwrap();
            let b = auc_by_pairs(&l, &s);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pr_curve_shape() {
        let l = labels(&[1, 1, 0, 0]);
        let c = pr_curve(&l, &[0.9, 0.8, 0.3, 0.2]).unwrap();
        assert!(c.points.iter().any(|p| p.recall == 1.0 && p.precision == 1.0));
        assert_eq!(c.points.len(), 4 + 1);
        assert!((c.auc - 1.0).abs() < 1e-12);
        let ties = pr_curve(&l, &[0.5, 0.5, 0.5, 0.1]).unwrap();
        assert_eq!(ties.points.len(), 2 + 1);
        assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall));
    }

    #[test]
    fn pr_auc_of_random_scores_is_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let l: Vec<Label> = (0..n).map(|i| Label::from_bool(i % 2 == 0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c = pr_curve(&l, &s).unwrap();
        assert!((c.auc - 0.5).abs() <= 0.05, "{}", c.auc);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(
            raw in prop::collection::vec((any::<bool>(), 0u8..20), 2..60),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let mut l: Vec<Label> = raw.iter().map(|(x, _)| Label::from_bool(*x)).collect();
            l[0] = Label::Malicious;
            l[1] = Label::Legitimate;
            let s: Vec<f64> = raw.iter().map(|(_, v)| *v as f64 / 19.0).collect();
            let base = roc_auc(&l, &s).unwrap();
            let affine: Vec<f64> = s.iter().map(|x| a * x + b).collect();
            let cubic: Vec<f64> = s.iter().map(|x| x.powi(3) + x).collect();
            let exp: Vec<f64> = s.iter().map(|x| (3.0 * x).exp()).collect();
            for t in [affine, cubic, exp] {
                prop_assert!((roc_auc(&l, &t).unwrap() - base).abs() < 1e-12);
            }
        }

        #[test]
        fn threshold_point_agrees_with_metrics(
            raw in prop::collection::vec((any::<bool>(), 0u8..=10), 2..60),
        ) {
            let mut l: Vec<Label> = raw.iter().map(|(x, _)| Label::from_bool(*x)).collect();
            l[0] = Label::Malicious;
            l[1] = Label::Legitimate;
            let s: Vec<f64> = raw.iter().map(|(_, v)| *v as f64 / 10.0).collect();
            prop_assume!(s.iter().any(|&x| x >= 0.5));
            let m = classification_metrics(&l, &s, 0.5).unwrap();
            let c = pr_curve(&l, &s).unwrap();
            let p = c.points.iter()
                .filter(|p| p.threshold.is_some_and(|t| t >= 0.5))
                .last()
                .unwrap();
            prop_assert!((p.recall - m.recall).abs() < 1e-12);
            prop_assert!((p.precision - m.precision).abs() < 1e-12);
        }

        #[test]
        fn stored_counts_reproduce_metrics(
            raw in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..80),
        ) {
            let l: Vec<Label> = raw.iter().map(|(x, _)| Label::from_bool(*x)).collect();
            let s: Vec<f64> = raw.iter().map(|(_, v)| *v).collect();
            let m = classification_metrics(&l, &s, 0.5).unwrap();
            prop_assert_eq!(m.confusion.total(), l.len() as u64);
            prop_assert_eq!(m.confusion.precision(), m.precision);
            prop_assert_eq!(m.confusion.recall(), m.recall);
            prop_assert_eq!(m.confusion.f1(), m.f1);
        }
    }
}
