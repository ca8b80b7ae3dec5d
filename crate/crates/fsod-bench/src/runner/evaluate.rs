//! Turn a run record into a metric report. Headline scores exclude failed
//! images; an alternate accounting that counts them as empty predictions is
//! attached whenever failures occurred.

use std::collections::BTreeSet;

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::metrics::{
    compute_report, GroupKey, GtsByImage, MetricConfig, MetricReport, PredsByImage,
};
use crate::split::{Role, SplitAssignment};

use super::record::{RunRecord, RunStatus};
use super::{ExperimentConfig, InvalidLabelPolicy};

pub fn evaluate(
    record: &RunRecord,
    index: &DatasetIndex,
    split: &SplitAssignment,
    config: &ExperimentConfig,
    metric_cfg: &MetricConfig,
) -> Result<MetricReport> {
    let test_ids: BTreeSet<String> = split
        .ids_with(Role::Test)
        .into_iter()
        .map(str::to_string)
        .collect();
    for id in record.entries.keys() {
        if !test_ids.contains(id) {
            return Err(Error::Validation(format!(
                "run record entry '{id}' is not in the split's test partition"
            )));
        }
    }
    for id in &test_ids {
        if index.image(id).is_none() {
            return Err(Error::Validation(format!(
                "split references image '{id}' missing from the index"
            )));
        }
    }

    let ok_ids: BTreeSet<String> = record
        .entries
        .values()
        .filter(|e| e.status == RunStatus::Ok)
        .map(|e| e.image_id.clone())
        .collect();
    // failed, skipped, or never attempted
    let failed: BTreeSet<String> = test_ids.difference(&ok_ids).cloned().collect();

    let mut preds: PredsByImage = PredsByImage::new();
    for id in &ok_ids {
        let entry = &record.entries[id];
        let kept = entry
            .predictions
            .iter()
            .filter(|d| match config.invalid_label_policy {
                InvalidLabelPolicy::CountFp => true,
                InvalidLabelPolicy::Drop => d.in_vocab,
            })
            .cloned()
            .collect();
        preds.insert(id.clone(), kept);
    }

    let gts_for = |ids: &BTreeSet<String>| -> GtsByImage {
        ids.iter()
            .map(|id| {
                (
                    id.clone(),
                    index
                        .annotations_for(id)
                        .into_iter()
                        .cloned()
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    };

    let key = GroupKey {
        dataset: index.source.clone(),
        method: config.method.clone(),
        k: config.k,
    };

    // headline: failed images excluded from both sides
    let mut headline = compute_report(&preds, &gts_for(&ok_ids), metric_cfg, key.clone());
    headline.failed_images = failed.len() as u64;
    headline.images = test_ids.len() as u64;

    if !failed.is_empty() {
        let with_empty = compute_report(&preds, &gts_for(&test_ids), metric_cfg, key);
        headline.mf1_failed_as_empty = Some(with_empty.mf1);
        headline.mean_iou_failed_as_empty = Some(with_empty.mean_iou_tp_at_05);
    }
    Ok(headline)
}
