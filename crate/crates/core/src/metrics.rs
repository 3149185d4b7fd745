//! Classification metrics over class indices and per-instance scores.
//!
//! Labels and predictions are class indices `< num_classes`. Scores are
//! anything that views as a probability row (`ProbVector`, `Vec<f64>`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::LabelSpace;

/// Default probability floor for [`log_loss`].
pub const LOG_LOSS_CLAMP: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(usize, usize),
    #[error("auc undefined: no class has both positives and negatives")]
    SingleClass,
    #[error("kappa undefined: chance agreement is 1")]
    UndefinedKappa,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check(pred: &[usize], labels: &[usize], c: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if pred.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), labels.len()));
    }
    if let Some(&bad) = pred.iter().chain(labels).find(|&&l| l >= c) {
        return Err(MetricsError::LabelOutOfRange(bad, c));
    }
    Ok(())
}

/// `m[true][pred]` counts.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    check(pred, labels, num_classes)?;
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &y) in pred.iter().zip(labels) {
        m[y][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if pred.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), labels.len()));
    }
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class precision/recall/F1. An undefined ratio (no predictions, no
/// support, or `P + R = 0`) is 0.
pub fn per_class(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<ClassStats>> {
    let m = confusion_matrix(pred, labels, num_classes)?;
    Ok((0..num_classes)
        .map(|k| {
            let tp = m[k][k] as f64;
            let support: usize = m[k].iter().sum();
            let predicted: usize = m.iter().map(|row| row[k]).sum();
            let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassStats {
                class: k.to_string(),
                support,
                predicted,
                precision,
                recall,
                f1,
            }
        })
        .collect())
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let stats = per_class(pred, labels, num_classes)?;
    Ok(stats.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / labels.len() as f64)
}

/// Classes that occur among labels or predictions.
fn present(stats: &[ClassStats]) -> impl Iterator<Item = &ClassStats> {
    stats.iter().filter(|s| s.support + s.predicted > 0)
}

/// Binary: precision of class 1. Multiclass: unweighted mean over present
/// classes.
pub fn precision(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let stats = per_class(pred, labels, num_classes)?;
    if num_classes == 2 {
        return Ok(stats[1].precision);
    }
    let (sum, n) = present(&stats).fold((0.0, 0), |(s, n), c| (s + c.precision, n + 1));
    Ok(sum / n as f64)
}

/// Binary: recall of class 1. Multiclass: unweighted mean over present
/// classes.
pub fn recall(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let stats = per_class(pred, labels, num_classes)?;
    if num_classes == 2 {
        return Ok(stats[1].recall);
    }
    let (sum, n) = present(&stats).fold((0.0, 0), |(s, n), c| (s + c.recall, n + 1));
    Ok(sum / n as f64)
}

/// `(p_o - p_e) / (1 - p_e)` with `p_e` from the marginal products.
pub fn cohen_kappa(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let m = confusion_matrix(pred, labels, num_classes)?;
    let n = labels.len() as f64;
    let p_o = (0..num_classes).map(|k| m[k][k] as f64).sum::<f64>() / n;
    let p_e = (0..num_classes)
        .map(|k| {
            let row: usize = m[k].iter().sum();
            let col: usize = m.iter().map(|r| r[k]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Err(MetricsError::UndefinedKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Mann–Whitney AUC of `scores` against boolean `positive`, average ranks
/// for ties. `None` if either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
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
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&r| positive[r]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Support-weighted one-vs-rest AUC. Binary problems use the class-1 score.
/// Classes lacking positives or negatives drop out of the weighting.
pub fn weighted_ovr_auc<S: AsRef<[f64]>>(scores: &[S], labels: &[usize], num_classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(MetricsError::LabelOutOfRange(bad, num_classes));
    }
    let column = |k: usize| -> Vec<f64> { scores.iter().map(|s| s.as_ref()[k]).collect() };
    if num_classes == 2 {
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return binary_auc(&column(1), &pos).ok_or(MetricsError::SingleClass);
    }
    let (mut total, mut weight) = (0.0, 0.0);
    for k in 0..num_classes {
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if let Some(auc) = binary_auc(&column(k), &pos) {
            let support = pos.iter().filter(|&&p| p).count() as f64;
            total += support * auc;
            weight += support;
        }
    }
    if weight == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    Ok(total / weight)
}

/// Mean `-ln(max(p_y, clamp))`.
pub fn log_loss<S: AsRef<[f64]>>(scores: &[S], labels: &[usize], clamp: f64) -> Result<f64> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let mut total = 0.0;
    for (s, &y) in scores.iter().zip(labels) {
        let s = s.as_ref();
        let p = *s.get(y).ok_or(MetricsError::LabelOutOfRange(y, s.len()))?;
        total -= p.max(clamp).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Log loss of one-hot predicted labels, floor [`LOG_LOSS_CLAMP`]: each miss
/// costs `-ln 1e-15`, each hit costs 0.
pub fn log_loss_hard(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check(pred, labels, num_classes)?;
    let onehot: Vec<Vec<f64>> = pred
        .iter()
        .map(|&p| {
            let mut v = vec![0.0; num_classes];
            v[p] = 1.0;
            v
        })
        .collect();
    log_loss(&onehot, labels, LOG_LOSS_CLAMP)
}

/// Every reported metric. AUC and kappa are `None` when undefined on the
/// given labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_ovr_auc: Option<f64>,
    pub weighted_f1: f64,
    pub log_loss: f64,
    pub log_loss_hard: f64,
    pub cohen_kappa: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub n: usize,
    pub per_class: Vec<ClassStats>,
}

impl MetricsReport {
    /// Predicted label = argmax of each score row (lowest index on ties).
    pub fn compute<S: AsRef<[f64]>>(scores: &[S], labels: &[usize], space: &LabelSpace) -> Result<Self> {
        let c = space.len();
        let pred: Vec<usize> = scores.iter().map(|s| crate::experts::argmax(s.as_ref())).collect();
        let mut per_class = per_class(&pred, labels, c)?;
        for (stats, name) in per_class.iter_mut().zip(space.classes()) {
            stats.class.clone_from(name);
        }
        Ok(Self {
            accuracy: accuracy(&pred, labels)?,
            weighted_ovr_auc: match weighted_ovr_auc(scores, labels, c) {
                Ok(v) => Some(v),
                Err(MetricsError::SingleClass) => None,
                Err(e) => return Err(e),
            },
            weighted_f1: weighted_f1(&pred, labels, c)?,
            log_loss: log_loss(scores, labels, LOG_LOSS_CLAMP)?,
            log_loss_hard: log_loss_hard(&pred, labels, c)?,
            cohen_kappa: match cohen_kappa(&pred, labels, c) {
                Ok(v) => Some(v),
                Err(MetricsError::UndefinedKappa) => None,
                Err(e) => return Err(e),
            },
            macro_precision: precision(&pred, labels, c)?,
            macro_recall: recall(&pred, labels, c)?,
            n: labels.len(),
            per_class,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn auc_pairs(scores: &[f64], pos: &[bool]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize, c: usize, coarse: bool) -> (Vec<Vec<f64>>, Vec<usize>) {
        let scores = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..c)
                    .map(|_| {
                        if coarse {
                            f64::from(rng.gen_range(1..5u8))
                        } else {
                            rng.gen_range(0.01..1.0)
                        }
                    })
                    .collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        (scores, (0..n).map(|_| rng.gen_range(0..c)).collect())
    }

    #[test]
    fn auc_extremes() {
        let pos = [false, false, true, true];
        assert_eq!(binary_auc(&[0.1, 0.2, 0.8, 0.9], &pos), Some(1.0));
        assert_eq!(binary_auc(&[0.9, 0.8, 0.2, 0.1], &pos), Some(0.0));
        assert_eq!(binary_auc(&[0.5; 4], &pos), Some(0.5));
        assert_eq!(binary_auc(&[0.5; 2], &[true, true]), None);
    }

    #[test]
    fn weighted_auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let c = 2 + trial % 4;
            let (scores, labels) = random_scores(&mut rng, 200, c, trial % 2 == 0);
            let got = weighted_ovr_auc(&scores, &labels, c).unwrap();
            let want = if c == 2 {
                let col: Vec<f64> = scores.iter().map(|s| s[1]).collect();
                let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                auc_pairs(&col, &pos).unwrap()
            } else {
                let (mut t, mut w) = (0.0, 0.0);
                for k in 0..c {
                    let col: Vec<f64> = scores.iter().map(|s| s[k]).collect();
                    let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
                    if let Some(a) = auc_pairs(&col, &pos) {
                        let n = pos.iter().filter(|&&p| p).count() as f64;
                        t += n * a;
                        w += n;
                    }
                }
                t / w
            };
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn auc_single_class_is_an_error() {
        let scores = vec![vec![0.3, 0.7]; 3];
        assert_eq!(weighted_ovr_auc(&scores, &[1, 1, 1], 2), Err(MetricsError::SingleClass));
        let scores = vec![vec![0.3, 0.3, 0.4]; 3];
        assert_eq!(weighted_ovr_auc(&scores, &[2, 2, 2], 3), Err(MetricsError::SingleClass));
    }

    #[test]
    fn auc_drops_classes_without_positives() {
        // class 2 never occurs; the two remaining classes are perfectly ranked
        let scores = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1]];
        assert_eq!(weighted_ovr_auc(&scores, &[0, 1], 3), Ok(1.0));
    }

    #[test]
    fn f1_extremes_and_three_class_confusion() {
        assert_eq!(weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3), Ok(1.0));
        assert_eq!(weighted_f1(&[1, 1, 0, 0], &[0, 0, 1, 1], 2), Ok(0.0));
        // true:  0 0 0 1 1 2
        // pred:  0 0 1 1 2 2
        // class 0: P=2/2 R=2/3 F=0.8; class 1: P=1/2 R=1/2 F=0.5; class 2: P=1/2 R=1 F=2/3
        let f = weighted_f1(&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 2], 3).unwrap();
        let want = (3.0 * 0.8 + 2.0 * 0.5 + 1.0 * (2.0 / 3.0)) / 6.0;
        assert!((f - want).abs() < 1e-15);
        assert!((precision(&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 2], 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(
            (recall(&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 2], 3).unwrap() - (2.0 / 3.0 + 0.5 + 1.0) / 3.0).abs()
                < 1e-15
        );
    }

    #[test]
    fn always_positive_predictor() {
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i < 3)).collect();
        let pred = vec![1; 10];
        assert_eq!(recall(&pred, &labels, 2), Ok(1.0));
        assert!((precision(&pred, &labels, 2).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(accuracy(&labels, &labels), Ok(1.0));
        assert_eq!(precision(&labels, &labels, 2), Ok(1.0));
        assert_eq!(recall(&labels, &labels, 2), Ok(1.0));
    }

    #[test]
    fn kappa_cases() {
        // confusion [[40, 10], [20, 30]]
        let mut labels = Vec::new();
        let mut pred = Vec::new();
        for (y, p, n) in [(0, 0, 40), (0, 1, 10), (1, 0, 20), (1, 1, 30)] {
            labels.extend(std::iter::repeat_n(y, n));
            pred.extend(std::iter::repeat_n(p, n));
        }
        let p_o = 70.0 / 100.0;
        let p_e = (50.0 / 100.0) * (60.0 / 100.0) + (50.0 / 100.0) * (40.0 / 100.0);
        let k = cohen_kappa(&pred, &labels, 2).unwrap();
        assert!((k - (p_o - p_e) / (1.0 - p_e)).abs() < 1e-15);
        assert!((k - 0.4).abs() < 1e-12);
        assert_eq!(cohen_kappa(&[0, 1, 2], &[0, 1, 2], 3), Ok(1.0));
        assert_eq!(cohen_kappa(&[0; 4], &[0, 1, 0, 1], 2), Ok(0.0));
        assert_eq!(cohen_kappa(&[1; 4], &[1; 4], 2), Err(MetricsError::UndefinedKappa));
    }

    #[test]
    fn log_loss_cases() {
        for c in [2usize, 3, 10] {
            let scores = vec![vec![1.0 / c as f64; c]; 5];
            let l = log_loss(&scores, &[0, 1, 0, 1, 1], LOG_LOSS_CLAMP).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-15);
        }
        let labels = [0, 1, 1, 0, 1, 0, 0, 1];
        let pred = [0, 1, 0, 0, 1, 1, 0, 1];
        let a = accuracy(&pred, &labels).unwrap();
        let h = log_loss_hard(&pred, &labels, 2).unwrap();
        assert!((h - (1.0 - a) * -(1e-15f64).ln()).abs() < 1e-12);
        assert!((h - 34.538776394910684 * 0.25).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (scores, labels) = random_scores(&mut rng, 100, 4, false);
        let mut direct = 0.0;
        for i in 0..100 {
            direct += -scores[i][labels[i]].ln();
        }
        assert!((log_loss(&scores, &labels, 1e-15).unwrap() - direct / 100.0).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert_eq!(accuracy(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(weighted_f1(&[0], &[0, 1], 2), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(cohen_kappa(&[3], &[0], 2), Err(MetricsError::LabelOutOfRange(3, 2)));
    }

    #[test]
    fn report_fields() {
        let space = LabelSpace::from_classes(["-1", "+1"]).unwrap();
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.3, 0.7]];
        let r = MetricsReport::compute(&scores, &[0, 1, 1, 1], &space).unwrap();
        assert_eq!(r.n, 4);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.weighted_ovr_auc, Some(1.0));
        assert_eq!(r.per_class[1].class, "+1");
        let json = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = vec![
            "accuracy",
            "cohen_kappa",
            "log_loss",
            "log_loss_hard",
            "macro_precision",
            "macro_recall",
            "n",
            "per_class",
            "weighted_f1",
            "weighted_ovr_auc",
        ];
        want.sort_unstable();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, want);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..60),
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let pos: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let a = binary_auc(&scores, &pos);
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(a, binary_auc(&t, &pos));
            if let Some(a) = a {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn weighted_f1_is_macro_when_balanced(
            pred in proptest::collection::vec(0usize..3, 30),
        ) {
            let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
            let stats = per_class(&pred, &labels, 3).unwrap();
            let macro_f1 = stats.iter().map(|s| s.f1).sum::<f64>() / 3.0;
            prop_assert!((weighted_f1(&pred, &labels, 3).unwrap() - macro_f1).abs() < 1e-12);
        }

        #[test]
        fn log_loss_falls_when_true_class_gains(
            p in proptest::collection::vec(0.01f64..1.0, 3),
            i in 0usize..3,
            boost in 0.01f64..5.0,
        ) {
            let norm = |v: &[f64]| -> Vec<f64> { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect() };
            let before = norm(&p);
            let mut raised = p.clone();
            raised[i] += boost;
            let after = norm(&raised);
            let l0 = log_loss(&[before], &[i], LOG_LOSS_CLAMP).unwrap();
            let l1 = log_loss(&[after], &[i], LOG_LOSS_CLAMP).unwrap();
            prop_assert!(l1 < l0);
        }

        #[test]
        fn metric_ranges(pred in proptest::collection::vec(0usize..4, 1..50), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = pred.iter().map(|_| rng.gen_range(0..4)).collect();
            for v in [
                accuracy(&pred, &labels).unwrap(),
                weighted_f1(&pred, &labels, 4).unwrap(),
                precision(&pred, &labels, 4).unwrap(),
                recall(&pred, &labels, 4).unwrap(),
            ] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Ok(k) = cohen_kappa(&pred, &labels, 4) {
                prop_assert!((-1.0..=1.0).contains(&k));
            }
        }
    }
}
