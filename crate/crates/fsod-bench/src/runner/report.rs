//! Result tables: method rows against K column groups of
//! {mF1, Mean IoU (TP@0.5)}, one sheet per dataset plus a cross-dataset
//! macro sheet. Values are printed half-even at two decimals; absent cells
//! render as an em dash.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::metrics::{aggregate, Aggregation, MetricReport};
use crate::util::round_half_even;

const MISSING: &str = "—";

fn fmt_score(v: f64) -> String {
    format!("{:.2}", round_half_even(v, 2))
}

fn render_sheet(title: &str, reports: &[&MetricReport]) -> String {
    let methods: BTreeSet<&str> = reports.iter().map(|r| r.key.method.as_str()).collect();
    let ks: BTreeSet<u32> = reports.iter().map(|r| r.key.k).collect();
    let mut cells: BTreeMap<(&str, u32), (f64, f64)> = BTreeMap::new();
    for r in reports {
        cells.insert(
            (r.key.method.as_str(), r.key.k),
            (r.mf1, r.mean_iou_tp_at_05),
        );
    }

    let method_width = methods
        .iter()
        .map(|m| m.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(6);
    let col = 8usize;

    let mut out = String::new();
    out.push_str(&format!("## {title}\n"));
    let mut head1 = format!("{:<method_width$}", "");
    let mut head2 = format!("{:<method_width$}", "Method");
    for k in &ks {
        head1.push_str(&format!("  {:^width$}", format!("K={k}"), width = col * 2 + 2));
        head2.push_str(&format!("  {:>col$}  {:>col$}", "mF1", "MeanIoU"));
    }
    out.push_str(&head1);
    out.push('\n');
    out.push_str(&head2);
    out.push('\n');
    out.push_str(&"-".repeat(head2.len()));
    out.push('\n');
    for method in &methods {
        let mut row = format!("{method:<method_width$}");
        for k in &ks {
            match cells.get(&(*method, *k)) {
                Some((mf1, miou)) => {
                    row.push_str(&format!(
                        "  {:>col$}  {:>col$}",
                        fmt_score(*mf1),
                        fmt_score(*miou)
                    ));
                }
                None => {
                    row.push_str(&format!("  {MISSING:>col$}  {MISSING:>col$}"));
                }
            }
        }
        out.push_str(&row);
        out.push('\n');
    }
    out.push('\n');
    out
}

/// Render per-dataset sheets plus, when several datasets are present, an
/// overall sheet holding the unweighted macro mean per (method, K).
pub fn render_tables(reports: &[MetricReport]) -> Result<String> {
    let mut by_dataset: BTreeMap<&str, Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        by_dataset.entry(r.key.dataset.as_str()).or_default().push(r);
    }
    let mut out = String::new();
    for (dataset, group) in &by_dataset {
        out.push_str(&render_sheet(dataset, group));
    }
    if by_dataset.len() > 1 {
        let mut by_method_k: BTreeMap<(String, u32), Vec<MetricReport>> = BTreeMap::new();
        for r in reports {
            by_method_k
                .entry((r.key.method.clone(), r.key.k))
                .or_default()
                .push(r.clone());
        }
        let mut overall = Vec::new();
        for group in by_method_k.values() {
            overall.push(aggregate(group, Aggregation::Macro)?);
        }
        let refs: Vec<&MetricReport> = overall.iter().collect();
        out.push_str(&render_sheet("overall (macro over datasets)", &refs));
    }
    Ok(out)
}

/// Flat CSV alternative: one row per (dataset, method, K), followed by a
/// supplementary per-class section with TP/FP/FN counts at the anchor.
pub fn render_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("dataset,method,k,mf1,mean_iou_tp_at_05,images,failed_images\n");
    let mut sorted: Vec<&MetricReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    for r in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.key.dataset,
            r.key.method,
            r.key.k,
            fmt_score(r.mf1),
            fmt_score(r.mean_iou_tp_at_05),
            r.images,
            r.failed_images
        ));
    }
    out.push('\n');
    out.push_str("dataset,method,k,class,tp_at_05,fp_at_05,fn_at_05\n");
    for r in &sorted {
        for (class, counts) in &r.per_class_at_anchor {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.key.dataset, r.key.method, r.key.k, class, counts.tp, counts.fp, counts.fn_
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compute_report, GroupKey, MetricConfig};

    fn report(dataset: &str, method: &str, k: u32, mf1: f64, miou: f64) -> MetricReport {
        let mut r = compute_report(
            &Default::default(),
            &Default::default(),
            &MetricConfig::default(),
            GroupKey {
                dataset: dataset.into(),
                method: method.into(),
                k,
            },
        );
        r.mf1 = mf1;
        r.mean_iou_tp_at_05 = miou;
        r
    }

    #[test]
    fn one_method_three_ks_yields_three_column_pairs() {
        let reports = vec![
            report("d", "m", 1, 0.24, 0.83),
            report("d", "m", 3, 0.28, 0.83),
            report("d", "m", 6, 0.30, 0.84),
        ];
        let table = render_tables(&reports).unwrap();
        assert_eq!(table.matches("K=").count(), 3);
        assert_eq!(table.matches("mF1").count(), 3);
        assert!(table.contains("0.30"));
        assert!(table.contains("0.84"));
    }

    #[test]
    fn missing_cells_render_as_dash() {
        let reports = vec![
            report("d", "m1", 1, 0.2, 0.5),
            report("d", "m1", 3, 0.3, 0.6),
            report("d", "m2", 1, 0.1, 0.4),
        ];
        let table = render_tables(&reports).unwrap();
        assert!(table.contains(MISSING), "m2 has no K=3 cell:\n{table}");
    }

    #[test]
    fn scores_round_half_even_to_two_decimals() {
        let reports = vec![report("d", "m", 1, 0.7387, 0.125)];
        let table = render_tables(&reports).unwrap();
        assert!(table.contains("0.74"));
        assert!(table.contains("0.12"));
    }

    #[test]
    fn overall_sheet_is_the_macro_mean() {
        let reports = vec![
            report("d1", "m", 1, 0.2, 0.4),
            report("d2", "m", 1, 0.4, 0.6),
        ];
        let table = render_tables(&reports).unwrap();
        assert!(table.contains("overall"));
        assert!(table.contains("0.30"));
        assert!(table.contains("0.50"));
    }
}
