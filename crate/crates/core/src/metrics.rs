//! Accuracy, macro-F1 over κ+1 classes and augmented-class detection AUC.
//!
//! Labels are 1-based; class `κ+1` is the augmented class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(preds: &[usize], truths: &[usize]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            got: preds.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(preds, truths)?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// `num_classes × num_classes` counts, rows indexed by truth, columns by
/// prediction.
pub fn confusion_matrix(preds: &[usize], truths: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    check_lengths(preds, truths)?;
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        for y in [p, t] {
            if y == 0 || y > num_classes {
                return Err(Error::invalid(format!("label {y} outside 1..={num_classes}")));
            }
        }
        m[t - 1][p - 1] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 per class; undefined ratios are 0.
pub fn per_class_scores(confusion: &[Vec<u64>]) -> Vec<ClassScores> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = (0..k).map(|r| confusion[r][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores { precision, recall, f1 }
        })
        .collect()
}

/// Mean F1 over all `num_known + 1` classes. A class absent from both
/// predictions and truths contributes 0.
pub fn macro_f1(preds: &[usize], truths: &[usize], num_known: usize) -> Result<f64> {
    let m = confusion_matrix(preds, truths, num_known + 1)?;
    let scores = per_class_scores(&m);
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucTies {
    /// Tied pairs count one half.
    #[default]
    Half,
    /// Only strictly ordered pairs count.
    Strict,
}

/// Fraction of (augmented, known) pairs where the augmented instance
/// scores higher. `None` when either group is empty.
pub fn detection_auc(scores: &[f64], truths: &[usize], num_known: usize, ties: AucTies) -> Result<Option<f64>> {
    if scores.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            got: scores.len(),
        });
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &t) in scores.iter().zip(truths) {
        if t == num_known + 1 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    neg.sort_by(f64::total_cmp);
    let tie_weight = match ties {
        AucTies::Half => 0.5,
        AucTies::Strict => 0.0,
    };
    let mut total = 0.0;
    for &p in &pos {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        total += below as f64 + tie_weight * (not_above - below) as f64;
    }
    Ok(Some(total / (pos.len() as f64 * neg.len() as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Absent when the test set lacks augmented or known instances.
    pub detection_auc: Option<f64>,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn compute(preds: &[usize], truths: &[usize], aug_scores: &[f64], num_known: usize, ties: AucTies) -> Result<Self> {
        let confusion = confusion_matrix(preds, truths, num_known + 1)?;
        let per_class = per_class_scores(&confusion);
        Ok(Self {
            accuracy: accuracy(preds, truths)?,
            macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / per_class.len() as f64,
            detection_auc: detection_auc(aug_scores, truths, num_known, ties)?,
            per_class,
            confusion,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: [usize; 6] = [1, 1, 1, 1, 2, 2];
    const P: [usize; 6] = [1, 1, 1, 2, 2, 1];

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&T, &T).unwrap(), 1.0);
        assert_eq!(accuracy(&[2, 2], &[1, 1]).unwrap(), 0.0);
        assert!((accuracy(&P, &T).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&T, &T, 1).unwrap(), 1.0);
        assert!((macro_f1(&P, &T, 1).unwrap() - 0.625).abs() < 1e-15);
        // class 3 never appears and contributes 0
        assert!((macro_f1(&T, &T, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&P, &T[..5], 1).is_err());
    }

    #[test]
    fn auc_examples() {
        let t = [2, 2, 1, 1];
        let auc = |s: &[f64], ties| detection_auc(s, &t, 1, ties).unwrap().unwrap();
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], AucTies::Half), 1.0);
        assert_eq!(auc(&[0.3; 4], AucTies::Half), 0.5);
        assert_eq!(auc(&[0.3; 4], AucTies::Strict), 0.0);
        assert_eq!(auc(&[0.9, 0.4, 0.5, 0.1], AucTies::Half), 0.75);
        assert_eq!(detection_auc(&[0.1, 0.2], &[1, 1], 1, AucTies::Half).unwrap(), None);
    }

    #[test]
    fn report_invariants() {
        let r = EvalReport::compute(&P, &T, &[0.0; 6], 1, AucTies::Half).unwrap();
        let total: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(total, 6);
        let trace: u64 = (0..2).map(|i| r.confusion[i][i]).sum();
        assert_eq!(r.accuracy, trace as f64 / 6.0);
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    fn naive_auc(scores: &[f64], truths: &[usize], aug: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if truths[i] == aug && truths[j] != aug {
                    den += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 8.0), n),
                prop::collection::vec(1usize..=3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((s, t) in labelled_scores()) {
            let fast = detection_auc(&s, &t, 2, AucTies::Half).unwrap();
            if t.contains(&3) && t.iter().any(|&y| y != 3) {
                prop_assert!((fast.unwrap() - naive_auc(&s, &t, 3)).abs() < 1e-12);
            } else {
                prop_assert!(fast.is_none());
            }
        }

        #[test]
        fn auc_invariant_under_increasing_transform((s, t) in labelled_scores()) {
            let warped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(
                detection_auc(&s, &t, 2, AucTies::Half).unwrap(),
                detection_auc(&warped, &t, 2, AucTies::Half).unwrap()
            );
        }

        #[test]
        fn diagonal_confusion_gives_f1_equal_accuracy(t in prop::collection::vec(1usize..=3, 1..30)) {
            let f1 = macro_f1(&t, &t, 2).unwrap();
            let present = (1..=3).filter(|k| t.contains(k)).count() as f64;
            prop_assert!((f1 - present / 3.0).abs() < 1e-12);
            prop_assert_eq!(accuracy(&t, &t).unwrap(), 1.0);
        }

        #[test]
        fn joint_permutation_is_harmless(
            pairs in prop::collection::vec((1usize..=3, 1usize..=3, 0u8..5), 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::rng::from_seed(seed));
            let unzip = |v: &[(usize, usize, u8)]| -> (Vec<usize>, Vec<usize>, Vec<f64>) {
                (v.iter().map(|x| x.0).collect(), v.iter().map(|x| x.1).collect(), v.iter().map(|x| x.2 as f64).collect())
            };
            let (p1, t1, s1) = unzip(&pairs);
            let (p2, t2, s2) = unzip(&shuffled);
            let a = EvalReport::compute(&p1, &t1, &s1, 2, AucTies::Half).unwrap();
            let b = EvalReport::compute(&p2, &t2, &s2, 2, AucTies::Half).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert_eq!(a.confusion, b.confusion);
            match (a.detection_auc, b.detection_auc) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
