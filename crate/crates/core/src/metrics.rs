//! Segmentation and classification scores, annotation coverage and the
//! agreement between class confidence and held-out performance.

use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationState, ClassId, ImageRecord};
use crate::error::{Error, Result};

/// Per-class scores with macro and support-weighted aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// `None` for classes absent from both prediction and truth.
    pub per_class: Vec<Option<f64>>,
    /// Number of ground-truth units per class.
    pub support: Vec<u64>,
    /// Mean over classes with a defined score.
    pub macro_avg: f64,
    /// `Σ support_c / Σ support · score_c`.
    pub weighted_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Confusion {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

fn confusion(pred: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} units, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = Confusion { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes] };
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (usize::from(p), usize::from(t));
        if p >= num_classes || t >= num_classes {
            return Err(Error::Invalid(format!("label out of range for {num_classes} classes")));
        }
        if p == t {
            m.tp[p] += 1;
        } else {
            m.fp[p] += 1;
            m.fn_[t] += 1;
        }
    }
    Ok(m)
}

fn report(m: &Confusion, score: impl Fn(u64, u64, u64) -> f64) -> ClassReport {
    let c = m.tp.len();
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let union = m.tp[k] + m.fp[k] + m.fn_[k];
            (union > 0).then(|| score(m.tp[k], m.fp[k], m.fn_[k]))
        })
        .collect();
    let support: Vec<u64> = (0..c).map(|k| m.tp[k] + m.fn_[k]).collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_avg = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    let total: u64 = support.iter().sum();
    let weighted_avg = if total == 0 {
        0.0
    } else {
        per_class
            .iter()
            .zip(&support)
            .map(|(s, &n)| s.unwrap_or(0.0) * n as f64)
            .sum::<f64>()
            / total as f64
    };
    ClassReport { per_class, support, macro_avg, weighted_avg }
}

/// Intersection over union, `TP / (TP + FP + FN)`.
pub fn iou(pred: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<ClassReport> {
    let m = confusion(pred, truth, num_classes)?;
    Ok(report(&m, |tp, fp, fn_| tp as f64 / (tp + fp + fn_) as f64))
}

/// Dice coefficient, `2TP / (2TP + FP + FN)`.
pub fn dice(pred: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<ClassReport> {
    let m = confusion(pred, truth, num_classes)?;
    Ok(report(&m, |tp, fp, fn_| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64))
}

/// Per-class F1 from precision and recall (zero when both vanish).
pub fn f1(pred: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<ClassReport> {
    let m = confusion(pred, truth, num_classes)?;
    Ok(report(&m, |tp, fp, fn_| {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }))
}

pub fn weighted_f1(pred: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<f64> {
    Ok(f1(pred, truth, num_classes)?.weighted_avg)
}

/// Annotated fraction of every class's ground-truth units in the pool.
/// Classes absent from the pool get 0.
pub fn per_class_annotation_ratio(state: &AnnotationState, pool: &[ImageRecord], num_classes: usize) -> Vec<f64> {
    let mut total = vec![0u64; num_classes];
    for image in pool {
        for &l in image.hidden_labels() {
            total[usize::from(l)] += 1;
        }
    }
    let mut annotated = vec![0u64; num_classes];
    for a in state.iter() {
        for &l in &a.labels {
            annotated[usize::from(l)] += 1;
        }
    }
    annotated
        .iter()
        .zip(&total)
        .map(|(&a, &t)| if t == 0 { 0.0 } else { a as f64 / t as f64 })
        .collect()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Spearman correlation; `None` with fewer than two pairs or a constant side.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Spearman correlation between class confidence and per-class test score,
/// one value per cycle. Classes whose test score is undefined are dropped.
pub fn confidence_alignment(sigma_history: &[Vec<f64>], test_history: &[Vec<Option<f64>>]) -> Result<Vec<Option<f64>>> {
    if sigma_history.len() != test_history.len() {
        return Err(Error::ShapeMismatch("confidence and test histories differ in length".into()));
    }
    sigma_history
        .iter()
        .zip(test_history)
        .map(|(sigma, test)| {
            if sigma.len() != test.len() {
                return Err(Error::ShapeMismatch("class count differs within a cycle".into()));
            }
            let (a, b): (Vec<f64>, Vec<f64>) =
                sigma.iter().zip(test).filter_map(|(&s, t)| t.map(|t| (s, t))).unzip();
            Ok(spearman(&a, &b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GroundTruthOracle, ImageId, Region, Shape, Square};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_labels(seed: u64, n: usize, c: u16) -> (Vec<ClassId>, Vec<ClassId>) {
        let mut rng = seeded(seed);
        let a = (0..n).map(|_| rng.random_range(0..c)).collect();
        let b = (0..n).map(|_| rng.random_range(0..c)).collect();
        (a, b)
    }

    fn confusion_matrix(pred: &[ClassId], truth: &[ClassId], c: usize) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; c]; c];
        for (&p, &t) in pred.iter().zip(truth) {
            m[usize::from(t)][usize::from(p)] += 1;
        }
        m
    }

    #[test]
    fn perfect_prediction() {
        let (t, _) = random_labels(1, 100, 4);
        for r in [iou(&t, &t, 4).unwrap(), dice(&t, &t, 4).unwrap(), f1(&t, &t, 4).unwrap()] {
            assert!(r.per_class.iter().flatten().all(|&v| v == 1.0));
            assert_eq!(r.macro_avg, 1.0);
            assert_eq!(r.weighted_avg, 1.0);
        }
    }

    #[test]
    fn disjoint_binary_masks() {
        let t = vec![0, 0, 1, 1];
        let p = vec![1, 1, 0, 0];
        assert_eq!(iou(&p, &t, 2).unwrap().per_class, vec![Some(0.0), Some(0.0)]);
        assert_eq!(dice(&p, &t, 2).unwrap().macro_avg, 0.0);
        assert_eq!(weighted_f1(&p, &t, 2).unwrap(), 0.0);
    }

    #[test]
    fn zero_union_class_is_excluded() {
        let r = iou(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.macro_avg, 1.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(iou(&[0], &[0, 1], 2), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn matches_confusion_matrix_oracle() {
        let (p, t) = random_labels(32, 32 * 32, 5);
        let m = confusion_matrix(&p, &t, 5);
        let r_iou = iou(&p, &t, 5).unwrap();
        let r_dice = dice(&p, &t, 5).unwrap();
        let r_f1 = f1(&p, &t, 5).unwrap();
        let total = (32 * 32) as f64;
        let mut weighted = 0.0;
        for (c, counts) in m.iter().enumerate() {
            let tp = counts[c] as f64;
            let row: f64 = counts.iter().sum::<u64>() as f64;
            let col: f64 = (0..5).map(|k| m[k][c]).sum::<u64>() as f64;
            assert_eq!(r_iou.per_class[c], Some(tp / (row + col - tp)));
            assert_eq!(r_dice.per_class[c], Some(2.0 * tp / (row + col)));
            let (precision, recall) = (tp / col, tp / row);
            let f = 2.0 * precision * recall / (precision + recall);
            assert!((r_f1.per_class[c].unwrap() - f).abs() < 1e-12);
            weighted += row / total * f;
        }
        assert!((weighted_f1(&p, &t, 5).unwrap() - weighted).abs() < 1e-12);
    }

    #[test]
    fn weighted_equals_macro_for_equal_supports() {
        let t: Vec<ClassId> = (0..300).map(|i| (i % 3) as ClassId).collect();
        let mut p = t.clone();
        let mut rng = seeded(5);
        for v in p.iter_mut() {
            if rng.random_bool(0.3) {
                *v = rng.random_range(0..3);
            }
        }
        let r = f1(&p, &t, 3).unwrap();
        assert!((r.macro_avg - r.weighted_avg).abs() < 1e-12);
    }

    fn pool() -> Vec<ImageRecord> {
        let shape = Shape::Plane { height: 4, width: 4 };
        let labels: Vec<ClassId> = (0..16).map(|j| if j % 4 < 2 && j / 4 < 2 { 1 } else { 0 }).collect();
        vec![ImageRecord::new(ImageId(0), shape, 1, vec![0.0; 16], labels, 2).unwrap()]
    }

    #[test]
    fn annotation_ratio_extremes() {
        let images = pool();
        let oracle = GroundTruthOracle::new(&images);
        assert_eq!(per_class_annotation_ratio(&AnnotationState::new(), &images, 2), vec![0.0, 0.0]);
        let mut st = AnnotationState::new();
        st.annotate(Region::square(ImageId(0), Square::new(0, 0, 4), 1), &oracle).unwrap();
        assert_eq!(per_class_annotation_ratio(&st, &images, 2), vec![1.0, 1.0]);
    }

    #[test]
    fn annotation_ratio_over_blob() {
        // the 2x2 class-1 blob sits in the top-left corner; a 2x2 window at
        // (1,1) covers one of its four pixels and three of the twelve others
        let images = pool();
        let oracle = GroundTruthOracle::new(&images);
        let mut st = AnnotationState::new();
        st.annotate(Region::square(ImageId(0), Square::new(1, 1, 2), 1), &oracle).unwrap();
        assert_eq!(per_class_annotation_ratio(&st, &images, 2), vec![3.0 / 12.0, 0.25]);
    }

    #[test]
    fn spearman_extremes() {
        let a = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(spearman(&a, &[1.0, 3.0, 2.0, 4.0]), Some(1.0));
        assert_eq!(spearman(&a, &[4.0, 2.0, 3.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&a, &[1.0; 4]), None);
    }

    fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
        // distinct values: ρ = 1 − 6 Σ d² / (n (n² − 1))
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|x| 1.0 + v.iter().filter(|y| *y < x).count() as f64).collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn alignment_matches_naive_oracle() {
        let mut rng = seeded(99);
        for _ in 0..200 {
            let a: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let got = confidence_alignment(std::slice::from_ref(&a), &[b.iter().map(|&x| Some(x)).collect()]).unwrap();
            assert!((got[0].unwrap() - naive_spearman(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_drops_undefined_classes() {
        let got = confidence_alignment(&[vec![0.1, 0.2, 0.3]], &[vec![Some(0.5), None, Some(0.9)]]).unwrap();
        assert_eq!(got, vec![Some(1.0)]);
        assert!(confidence_alignment(&[vec![0.1]], &[]).is_err());
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn relabeling_leaves_aggregates_unchanged(seed in 0u64..500) {
            let (p, t) = random_labels(seed, 200, 4);
            let mut perm: Vec<ClassId> = (0..4).collect();
            perm.shuffle(&mut seeded(seed + 1));
            let map = |v: &[ClassId]| -> Vec<ClassId> { v.iter().map(|&x| perm[usize::from(x)]).collect() };
            let (pp, tp) = (map(&p), map(&t));
            for (a, b) in [
                (iou(&p, &t, 4).unwrap(), iou(&pp, &tp, 4).unwrap()),
                (dice(&p, &t, 4).unwrap(), dice(&pp, &tp, 4).unwrap()),
                (f1(&p, &t, 4).unwrap(), f1(&pp, &tp, 4).unwrap()),
            ] {
                prop_assert!((a.macro_avg - b.macro_avg).abs() < 1e-12);
                prop_assert!((a.weighted_avg - b.weighted_avg).abs() < 1e-12);
            }
        }

        #[test]
        fn reports_stay_in_unit_interval(seed in 0u64..500) {
            let (p, t) = random_labels(seed, 64, 6);
            for r in [iou(&p, &t, 6).unwrap(), dice(&p, &t, 6).unwrap(), f1(&p, &t, 6).unwrap()] {
                prop_assert!(r.per_class.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!((0.0..=1.0).contains(&r.macro_avg));
                let total: u64 = r.support.iter().sum();
                let w: f64 = r.per_class.iter().zip(&r.support).map(|(s, &n)| s.unwrap_or(0.0) * n as f64 / total as f64).sum();
                prop_assert!((w - r.weighted_avg).abs() < 1e-12);
            }
        }
    }
}
