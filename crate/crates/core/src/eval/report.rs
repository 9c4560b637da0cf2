use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, Evaluator, MatchResult, PrCurve};
use crate::domain::CellClass;

/// One row of the mAP summary table. `None` marks a class without
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub class: Option<CellClass>,
    pub map_50: Option<f64>,
    pub map_75: Option<f64>,
    pub map_range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub iou_threshold: f64,
    pub map: f64,
    pub per_class: Vec<(CellClass, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub class: CellClass,
    pub iou_50: PrCurve,
    pub iou_75: PrCurve,
    pub oth: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub title: Option<String>,
    pub model: Option<String>,
    /// Confidence filter applied before ranking.
    pub tau: f64,
    pub iou_thresholds: Vec<f64>,
    pub rows: Vec<ReportRow>,
    pub per_threshold: Vec<ThresholdRow>,
    pub matches_at_50: Vec<MatchResult>,
    pub pr_curves: Vec<CurveSet>,
}

impl EvalReport {
    pub fn build(
        evaluator: &Evaluator,
        title: Option<String>,
        model: Option<String>,
        tau: f64,
        thresholds: &[f64],
    ) -> Result<Self, EvalError> {
        let at_50 = evaluator.map_at_filtered(0.5, tau)?;
        let at_75 = evaluator.map_at_filtered(0.75, tau)?;
        let range = evaluator.map_range_filtered(thresholds, tau)?;
        let prefix = |s: &str| match &title {
            Some(t) => format!("{t} - {s}"),
            None => s.to_string(),
        };

        let mut rows = vec![ReportRow {
            label: prefix("All tumor cells"),
            class: None,
            map_50: Some(at_50.map),
            map_75: Some(at_75.map),
            map_range: Some(range.map),
        }];
        for &class in evaluator.classes() {
            rows.push(ReportRow {
                label: prefix(class.label()),
                class: Some(class),
                map_50: at_50.ap(class),
                map_75: at_75.ap(class),
                map_range: range.class_mean(class),
            });
        }

        let per_threshold = range
            .per_threshold
            .iter()
            .map(|m| ThresholdRow {
                iou_threshold: m.iou_threshold,
                map: m.map,
                per_class: m.per_class.iter().map(|c| (c.class, c.ap)).collect(),
            })
            .collect();

        let present: Vec<CellClass> = evaluator
            .classes()
            .iter()
            .copied()
            .filter(|c| evaluator.gt_count(*c) > 0)
            .collect();
        let matches_at_50 = present
            .iter()
            .map(|&c| evaluator.match_class_filtered(c, 0.5, tau))
            .collect();
        let pr_curves = present
            .iter()
            .map(|&class| -> Result<CurveSet, EvalError> {
                Ok(CurveSet {
                    class,
                    iou_50: super::pr_curve(&evaluator.match_class_filtered(class, 0.5, tau))?,
                    iou_75: super::pr_curve(&evaluator.match_class_filtered(class, 0.75, tau))?,
                    oth: evaluator.oth_curve_filtered(class, 0.5, tau),
                })
            })
            .collect::<Result<_, _>>()?;

        Ok(EvalReport {
            title,
            model,
            tau,
            iou_thresholds: thresholds.to_vec(),
            rows,
            per_threshold,
            matches_at_50,
            pr_curves,
        })
    }

    /// The "All tumor cells" row.
    pub fn summary(&self) -> &ReportRow {
        &self.rows[0]
    }

    /// Tab-separated table with two-decimal values, laid out like the
    /// published assessment tables.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let range_label = range_header(&self.iou_thresholds);
        let _ = writeln!(out, "Biomarker\tmAP@0.50\tmAP@0.75\t{range_label}");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                row.label,
                fmt2(row.map_50),
                fmt2(row.map_75),
                fmt2(row.map_range)
            );
        }
        out
    }

    /// Plot-ready PR points: `class,curve,rank,confidence,precision,recall`.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class,curve,rank,confidence,precision,recall\n");
        for set in &self.pr_curves {
            for (name, curve) in [("iou_0.50", &set.iou_50), ("iou_0.75", &set.iou_75), ("oth", &set.oth)] {
                for (rank, p) in curve.points.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        set.class, name, rank + 1, p.confidence, p.precision, p.recall
                    );
                }
            }
        }
        out
    }
}

fn range_header(thresholds: &[f64]) -> String {
    if thresholds == crate::domain::default_iou_thresholds().as_slice() {
        "mAP@[.50:.05:.95]".to_string()
    } else {
        let list: Vec<String> = thresholds.iter().map(|t| format!("{t}")).collect();
        format!("mAP@[{}]", list.join(","))
    }
}

pub(crate) fn fmt2(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Model-comparison row built from each model's "All tumor cells" summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub map_50: Option<f64>,
    pub map_75: Option<f64>,
    pub map_range: Option<f64>,
}

impl ComparisonRow {
    pub fn from_report(model: impl Into<String>, report: &EvalReport) -> Self {
        let s = report.summary();
        ComparisonRow {
            model: model.into(),
            map_50: s.map_50,
            map_75: s.map_75,
            map_range: s.map_range,
        }
    }
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("Instance segmentation algorithm\tmAP@0.50\tmAP@0.75\tmAP@[.50:.05:.95]\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.model,
            fmt2(r.map_50),
            fmt2(r.map_75),
            fmt2(r.map_range)
        );
    }
    out
}
