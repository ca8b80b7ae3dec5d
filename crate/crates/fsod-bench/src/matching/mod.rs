//! Optimal one-to-one assignment of predictions to ground truth per image,
//! and TP/FP/FN derivation at a given IoU threshold.
//!
//! Matching is class-restricted: a Hungarian sub-problem runs per class label
//! on cost 1 - IoU. The assignment is computed once per (image, class) and
//! reused for every threshold, so TP sets nest as the threshold grows.

mod hungarian;

pub use hungarian::{hungarian, Assignment, CostMatrix};

use std::collections::BTreeMap;

use crate::backends::Detection;
use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::geometry::iou;

/// A matched (prediction, ground truth) pair with its IoU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Threshold-independent matching of one image's predictions to its ground
/// truth. Derive per-threshold outcomes with [`ImageMatching::at_threshold`].
#[derive(Debug, Clone)]
pub struct ImageMatching {
    pub matched: Vec<MatchedPair>,
    pub n_preds: usize,
    pub n_gts: usize,
}

/// TP/FP/FN sets at one threshold.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub threshold: f64,
    pub tp: Vec<MatchedPair>,
    pub fp: Vec<usize>,
    pub fn_gt: Vec<usize>,
}

impl ImageMatching {
    /// Run the per-class Hungarian assignments on cost 1 - IoU.
    pub fn compute(preds: &[Detection], gts: &[Annotation]) -> ImageMatching {
        // group indices by class label; BTreeMap keeps class order stable
        let mut by_class: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, p) in preds.iter().enumerate() {
            by_class.entry(p.label.as_str()).or_default().0.push(i);
        }
        for (j, g) in gts.iter().enumerate() {
            by_class.entry(g.class_label.as_str()).or_default().1.push(j);
        }

        let mut matched = Vec::new();
        for (_, (pi, gi)) in by_class {
            if pi.is_empty() || gi.is_empty() {
                continue;
            }
            let mut data = Vec::with_capacity(pi.len() * gi.len());
            for &p in &pi {
                for &g in &gi {
                    data.push(1.0 - iou(&preds[p].bbox, &gts[g].bbox));
                }
            }
            let cost = CostMatrix::new(pi.len(), gi.len(), data)
                .expect("1 - iou is always a finite cost in [0, 1]");
            for (r, c) in hungarian(&cost).pairs {
                matched.push(MatchedPair {
                    pred: pi[r],
                    gt: gi[c],
                    iou: iou(&preds[pi[r]].bbox, &gts[gi[c]].bbox),
                });
            }
        }
        matched.sort_by_key(|m| m.pred);
        ImageMatching {
            matched,
            n_preds: preds.len(),
            n_gts: gts.len(),
        }
    }

    /// Filter the fixed assignment at an IoU threshold in (0, 1].
    pub fn at_threshold(&self, threshold: f64) -> Result<MatchOutcome> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "IoU threshold must lie in (0, 1], got {threshold}"
            )));
        }
        let tp: Vec<MatchedPair> = self
            .matched
            .iter()
            .copied()
            .filter(|m| m.iou >= threshold)
            .collect();
        let mut pred_taken = vec![false; self.n_preds];
        let mut gt_taken = vec![false; self.n_gts];
        for m in &tp {
            pred_taken[m.pred] = true;
            gt_taken[m.gt] = true;
        }
        Ok(MatchOutcome {
            threshold,
            tp,
            fp: (0..self.n_preds).filter(|&i| !pred_taken[i]).collect(),
            fn_gt: (0..self.n_gts).filter(|&j| !gt_taken[j]).collect(),
        })
    }

    /// Matched pairs at or above `anchor`, as used by the mean-IoU metric.
    pub fn tp_ious_at(&self, anchor: f64) -> impl Iterator<Item = f64> + '_ {
        self.matched
            .iter()
            .filter(move |m| m.iou >= anchor)
            .map(|m| m.iou)
    }
}

/// One-shot convenience: match and derive the outcome at one threshold.
pub fn match_detections(
    preds: &[Detection],
    gts: &[Annotation],
    threshold: f64,
) -> Result<MatchOutcome> {
    ImageMatching::compute(preds, gts).at_threshold(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn det(x: f64, y: f64, s: f64, label: &str) -> Detection {
        Detection {
            bbox: BBox::new(x, y, x + s, y + s).unwrap(),
            label: label.to_string(),
            score: None,
            in_vocab: true,
        }
    }

    fn gt(x: f64, y: f64, s: f64, label: &str) -> Annotation {
        Annotation {
            bbox: BBox::new(x, y, x + s, y + s).unwrap(),
            class_label: label.to_string(),
            image_id: "img".to_string(),
        }
    }

    #[test]
    fn identical_sets_are_all_tp() {
        let preds = vec![det(0.0, 0.0, 10.0, "a"), det(20.0, 0.0, 10.0, "b")];
        let gts = vec![gt(0.0, 0.0, 10.0, "a"), gt(20.0, 0.0, 10.0, "b")];
        for tau in [0.05, 0.5, 1.0] {
            let out = match_detections(&preds, &gts, tau).unwrap();
            assert_eq!(out.tp.len(), 2);
            assert!(out.tp.iter().all(|m| m.iou == 1.0));
            assert!(out.fp.is_empty());
            assert!(out.fn_gt.is_empty());
        }
    }

    #[test]
    fn flipped_labels_never_match() {
        let preds = vec![det(0.0, 0.0, 10.0, "b"), det(20.0, 0.0, 10.0, "a")];
        let gts = vec![gt(0.0, 0.0, 10.0, "a"), gt(20.0, 0.0, 10.0, "b")];
        let out = match_detections(&preds, &gts, 0.05).unwrap();
        assert!(out.tp.is_empty());
        assert_eq!(out.fp.len(), 2);
        assert_eq!(out.fn_gt.len(), 2);
    }

    #[test]
    fn one_to_one_even_with_duplicate_predictions() {
        let preds = vec![det(0.0, 0.0, 10.0, "a"), det(0.0, 0.0, 10.0, "a")];
        let gts = vec![gt(0.0, 0.0, 10.0, "a")];
        let out = match_detections(&preds, &gts, 0.5).unwrap();
        assert_eq!(out.tp.len(), 1);
        assert_eq!(out.fp.len(), 1);
        assert!(out.fn_gt.is_empty());
    }

    #[test]
    fn outcome_counts_partition_inputs() {
        let preds = vec![
            det(0.0, 0.0, 10.0, "a"),
            det(3.0, 0.0, 10.0, "a"),
            det(50.0, 50.0, 10.0, "b"),
        ];
        let gts = vec![gt(0.0, 0.0, 10.0, "a"), gt(80.0, 80.0, 5.0, "c")];
        let m = ImageMatching::compute(&preds, &gts);
        for tau in [0.05, 0.3, 0.7, 1.0] {
            let out = m.at_threshold(tau).unwrap();
            assert_eq!(out.tp.len() + out.fp.len(), preds.len());
            assert_eq!(out.tp.len() + out.fn_gt.len(), gts.len());
        }
    }

    #[test]
    fn tp_sets_nest_as_threshold_grows() {
        let preds = vec![
            det(0.0, 0.0, 10.0, "a"),
            det(1.0, 1.0, 10.0, "a"),
            det(30.0, 0.0, 10.0, "a"),
            det(42.0, 0.0, 10.0, "a"),
        ];
        let gts = vec![
            gt(0.0, 0.0, 10.0, "a"),
            gt(2.0, 2.0, 10.0, "a"),
            gt(31.0, 0.0, 10.0, "a"),
            gt(60.0, 0.0, 10.0, "a"),
        ];
        let m = ImageMatching::compute(&preds, &gts);
        let taus = [0.1, 0.3, 0.5, 0.8, 1.0];
        let mut prev: Option<Vec<(usize, usize)>> = None;
        for tau in taus {
            let cur: Vec<(usize, usize)> = m
                .at_threshold(tau)
                .unwrap()
                .tp
                .iter()
                .map(|p| (p.pred, p.gt))
                .collect();
            if let Some(prev) = &prev {
                assert!(cur.iter().all(|p| prev.contains(p)), "nesting violated");
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn invalid_threshold_rejected() {
        let m = ImageMatching::compute(&[], &[]);
        assert!(m.at_threshold(0.0).is_err());
        assert!(m.at_threshold(1.5).is_err());
    }
}
