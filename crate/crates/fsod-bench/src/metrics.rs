//! Precision/recall/F1 at each IoU threshold, mF1 over the 50-threshold
//! sweep, Mean IoU of true positives at the 0.5 anchor, and micro/macro
//! aggregation into reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backends::Detection;
use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::matching::ImageMatching;

/// Sweep configuration: 50 evenly spaced IoU thresholds from 0.05 to 0.70
/// inclusive, plus the anchor threshold for the mean-IoU metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub thresholds: Vec<f64>,
    pub tp_iou_anchor: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            thresholds: threshold_sweep(0.05, 0.70, 50),
            tp_iou_anchor: 0.5,
        }
    }
}

/// Evenly spaced sweep with bit-exact endpoints.
pub fn threshold_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "a sweep needs at least two thresholds");
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            lo * (1.0 - t) + hi * t
        })
        .collect()
}

/// F1 as the harmonic mean of precision and recall; 0 when tp = 0.
pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

fn precision(tp: u64, fp: u64) -> f64 {
    if tp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

fn recall(tp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

/// Pooled counts and derived scores at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// TP/FP/FN tallies for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Report grouping key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub dataset: String,
    pub method: String,
    pub k: u32,
}

/// Full evaluation report for one (dataset, method, K) group.
///
/// `tp_iou_sum_at_anchor` and `tp_count_at_anchor` are carried so that
/// micro merging stays an associative fold over pooled counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub key: GroupKey,
    /// True when the group held no ground-truth boxes and no predictions.
    pub empty_group: bool,
    pub per_threshold: Vec<ThresholdMetrics>,
    pub mf1: f64,
    pub mean_iou_tp_at_05: f64,
    pub tp_iou_sum_at_anchor: f64,
    pub tp_count_at_anchor: u64,
    pub per_class_at_anchor: BTreeMap<String, ClassCounts>,
    pub images: u64,
    /// Images whose backend calls failed; excluded from the headline scores.
    pub failed_images: u64,
    /// Alternate accounting where failed images count as empty predictions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mf1_failed_as_empty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_iou_failed_as_empty: Option<f64>,
}

pub type PredsByImage = BTreeMap<String, Vec<Detection>>;
pub type GtsByImage = BTreeMap<String, Vec<Annotation>>;

/// Evaluate one group: micro-pool TP/FP/FN across its images at every
/// threshold, then average the 50 F1 values into mF1.
pub fn compute_report(
    preds_by_image: &PredsByImage,
    gts_by_image: &GtsByImage,
    cfg: &MetricConfig,
    key: GroupKey,
) -> MetricReport {
    let empty_vec_d: Vec<Detection> = Vec::new();
    let empty_vec_a: Vec<Annotation> = Vec::new();
    let ids: BTreeSet<&String> = preds_by_image.keys().chain(gts_by_image.keys()).collect();

    let mut total_preds = 0usize;
    let mut total_gts = 0usize;
    let mut matchings = Vec::with_capacity(ids.len());
    for id in &ids {
        let preds = preds_by_image.get(*id).unwrap_or(&empty_vec_d);
        let gts = gts_by_image.get(*id).unwrap_or(&empty_vec_a);
        total_preds += preds.len();
        total_gts += gts.len();
        matchings.push((ImageMatching::compute(preds, gts), preds, gts));
    }
    let empty_group = total_preds == 0 && total_gts == 0;

    let mut per_threshold = Vec::with_capacity(cfg.thresholds.len());
    for &tau in &cfg.thresholds {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (m, _, _) in &matchings {
            let out = m.at_threshold(tau).expect("sweep thresholds lie in (0, 1]");
            tp += out.tp.len() as u64;
            fp += out.fp.len() as u64;
            fn_ += out.fn_gt.len() as u64;
        }
        per_threshold.push(ThresholdMetrics {
            threshold: tau,
            precision: precision(tp, fp),
            recall: recall(tp, fn_),
            f1: f1(tp, fp, fn_),
            tp,
            fp,
            fn_,
        });
    }
    let mf1 = per_threshold.iter().map(|t| t.f1).sum::<f64>() / per_threshold.len() as f64;

    let mut tp_iou_sum = 0.0;
    let mut tp_count = 0u64;
    let mut per_class: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for (m, preds, gts) in &matchings {
        for v in m.tp_ious_at(cfg.tp_iou_anchor) {
            tp_iou_sum += v;
            tp_count += 1;
        }
        let out = m
            .at_threshold(cfg.tp_iou_anchor)
            .expect("anchor lies in (0, 1]");
        for pair in &out.tp {
            per_class
                .entry(gts[pair.gt].class_label.clone())
                .or_default()
                .tp += 1;
        }
        for &i in &out.fp {
            per_class.entry(preds[i].label.clone()).or_default().fp += 1;
        }
        for &j in &out.fn_gt {
            per_class
                .entry(gts[j].class_label.clone())
                .or_default()
                .fn_ += 1;
        }
    }
    let mean_iou = if tp_count == 0 {
        0.0
    } else {
        tp_iou_sum / tp_count as f64
    };

    MetricReport {
        key,
        empty_group,
        per_threshold,
        mf1: if empty_group { 0.0 } else { mf1 },
        mean_iou_tp_at_05: mean_iou,
        tp_iou_sum_at_anchor: tp_iou_sum,
        tp_count_at_anchor: tp_count,
        per_class_at_anchor: per_class,
        images: ids.len() as u64,
        failed_images: 0,
        mf1_failed_as_empty: None,
        mean_iou_failed_as_empty: None,
    }
}

/// Mean F1 over the configured threshold sweep.
pub fn mf1(preds_by_image: &PredsByImage, gts_by_image: &GtsByImage, cfg: &MetricConfig) -> f64 {
    compute_report(
        preds_by_image,
        gts_by_image,
        cfg,
        GroupKey {
            dataset: String::new(),
            method: String::new(),
            k: 0,
        },
    )
    .mf1
}

/// Mean IoU over matched pairs with IoU >= `anchor`, pooled across images;
/// 0 when no such pair exists.
pub fn mean_iou_tp(
    preds_by_image: &PredsByImage,
    gts_by_image: &GtsByImage,
    anchor: f64,
) -> f64 {
    let cfg = MetricConfig {
        tp_iou_anchor: anchor,
        ..MetricConfig::default()
    };
    compute_report(
        preds_by_image,
        gts_by_image,
        &cfg,
        GroupKey {
            dataset: String::new(),
            method: String::new(),
            k: 0,
        },
    )
    .mean_iou_tp_at_05
}

/// How to combine reports that share a method and K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Pool raw counts, then recompute scores. Used within a dataset.
    Micro,
    /// Unweighted mean of the per-report scores. Used across datasets.
    Macro,
}

/// Combine reports sharing (method, K). Mixed method/K inputs are rejected.
pub fn aggregate(reports: &[MetricReport], scheme: Aggregation) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("aggregate needs at least one report".into()))?;
    if reports
        .iter()
        .any(|r| r.key.method != first.key.method || r.key.k != first.key.k)
    {
        return Err(Error::Validation(
            "aggregate requires all reports to share method and K".into(),
        ));
    }
    if reports
        .iter()
        .any(|r| r.per_threshold.len() != first.per_threshold.len())
    {
        return Err(Error::Validation(
            "aggregate requires identical threshold sweeps".into(),
        ));
    }
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let same_dataset = reports.iter().all(|r| r.key.dataset == first.key.dataset);
    let dataset = if same_dataset {
        first.key.dataset.clone()
    } else {
        match scheme {
            Aggregation::Micro => "all".to_string(),
            Aggregation::Macro => "overall".to_string(),
        }
    };
    let key = GroupKey {
        dataset,
        method: first.key.method.clone(),
        k: first.key.k,
    };

    let mut per_threshold = Vec::with_capacity(first.per_threshold.len());
    for i in 0..first.per_threshold.len() {
        let tau = first.per_threshold[i].threshold;
        let tp: u64 = reports.iter().map(|r| r.per_threshold[i].tp).sum();
        let fp: u64 = reports.iter().map(|r| r.per_threshold[i].fp).sum();
        let fn_: u64 = reports.iter().map(|r| r.per_threshold[i].fn_).sum();
        let (p, r, f) = match scheme {
            Aggregation::Micro => (precision(tp, fp), recall(tp, fn_), f1(tp, fp, fn_)),
            Aggregation::Macro => {
                let n = reports.len() as f64;
                (
                    reports.iter().map(|r| r.per_threshold[i].precision).sum::<f64>() / n,
                    reports.iter().map(|r| r.per_threshold[i].recall).sum::<f64>() / n,
                    reports.iter().map(|r| r.per_threshold[i].f1).sum::<f64>() / n,
                )
            }
        };
        per_threshold.push(ThresholdMetrics {
            threshold: tau,
            precision: p,
            recall: r,
            f1: f,
            tp,
            fp,
            fn_,
        });
    }

    let tp_iou_sum: f64 = reports.iter().map(|r| r.tp_iou_sum_at_anchor).sum();
    let tp_count: u64 = reports.iter().map(|r| r.tp_count_at_anchor).sum();
    let (mf1, mean_iou) = match scheme {
        Aggregation::Micro => (
            per_threshold.iter().map(|t| t.f1).sum::<f64>() / per_threshold.len() as f64,
            if tp_count == 0 {
                0.0
            } else {
                tp_iou_sum / tp_count as f64
            },
        ),
        Aggregation::Macro => {
            let n = reports.len() as f64;
            (
                reports.iter().map(|r| r.mf1).sum::<f64>() / n,
                reports.iter().map(|r| r.mean_iou_tp_at_05).sum::<f64>() / n,
            )
        }
    };

    let mut per_class: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for r in reports {
        for (class, counts) in &r.per_class_at_anchor {
            let e = per_class.entry(class.clone()).or_default();
            e.tp += counts.tp;
            e.fp += counts.fp;
            e.fn_ += counts.fn_;
        }
    }

    Ok(MetricReport {
        key,
        empty_group: reports.iter().all(|r| r.empty_group),
        per_threshold,
        mf1,
        mean_iou_tp_at_05: mean_iou,
        tp_iou_sum_at_anchor: tp_iou_sum,
        tp_count_at_anchor: tp_count,
        per_class_at_anchor: per_class,
        images: reports.iter().map(|r| r.images).sum(),
        failed_images: reports.iter().map(|r| r.failed_images).sum(),
        mf1_failed_as_empty: None,
        mean_iou_failed_as_empty: None,
    })
}
