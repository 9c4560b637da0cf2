//! Instance-segmentation evaluation.
//!
//! Predictions are ranked by confidence (ties by id) and matched greedily to
//! ground truth of the same class. Cumulative TP/FP counts give a
//! precision-recall curve; AP integrates its monotone precision envelope over
//! recall, and mAP averages AP over the classes present in ground truth.

mod report;

pub use report::{
    render_comparison, ComparisonRow, CurveSet, EvalReport, ReportRow, ThresholdRow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    common_family, rank_order, CellClass, DomainError, GroundTruthInstance, PredictionInstance,
    StainKind,
};
use crate::maskops::{self, MaskError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("no ground-truth instances to evaluate against")]
    EmptyDataset,
    #[error("duplicate instance id {0:?} within one patch")]
    DuplicateId(String),
    #[error("inconsistent match: {0}")]
    Inconsistent(String),
}

/// Predictions and ground truth for one patch.
#[derive(Debug, Clone, Default)]
pub struct EvalSample {
    pub key: String,
    pub predictions: Vec<PredictionInstance>,
    pub ground_truth: Vec<GroundTruthInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Tp,
    Fp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub sample: usize,
    pub pred_id: String,
    pub confidence: f64,
    pub label: Label,
    pub gt_id: Option<String>,
    pub iou: Option<f64>,
}

/// Outcome of matching one class at one IoU threshold. Entries are in
/// ranking order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub class: CellClass,
    pub iou_threshold: f64,
    pub entries: Vec<MatchEntry>,
    /// `(sample, gt id)` of ground truth left unmatched (false negatives).
    pub unmatched_gt: Vec<(usize, String)>,
    pub total_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.label == Label::Tp).count()
    }

    pub fn false_positives(&self) -> usize {
        self.entries.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.unmatched_gt.len()
    }

    pub fn label_of(&self, pred_id: &str) -> Option<Label> {
        self.entries
            .iter()
            .find(|e| e.pred_id == pred_id)
            .map(|e| e.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_gt: usize,
}

/// Builds the cumulative precision-recall sequence, one point per ranked
/// prediction.
pub fn pr_curve(result: &MatchResult) -> Result<PrCurve, EvalError> {
    curve_from_labels(
        result
            .entries
            .iter()
            .map(|e| (e.confidence, e.label)),
        result.total_gt,
    )
}

fn curve_from_labels<I>(labels: I, total_gt: usize) -> Result<PrCurve, EvalError>
where
    I: IntoIterator<Item = (f64, Label)>,
{
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    for (confidence, label) in labels {
        match label {
            Label::Tp => tp += 1,
            Label::Fp => fp += 1,
        }
        if tp > total_gt {
            return Err(EvalError::Inconsistent(format!(
                "{tp} true positives against {total_gt} ground-truth instances"
            )));
        }
        let recall = if total_gt == 0 {
            0.0
        } else {
            tp as f64 / total_gt as f64
        };
        points.push(PrPoint {
            confidence,
            precision: tp as f64 / (tp + fp) as f64,
            recall,
            tp,
            fp,
        });
    }
    Ok(PrCurve { points, total_gt })
}

/// Precision envelope: each point's precision replaced by the maximum
/// precision attained at any recall greater than or equal to its own.
pub fn precision_envelope(curve: &PrCurve) -> Vec<f64> {
    let pts = &curve.points;
    let mut env: Vec<f64> = pts.iter().map(|p| p.precision).collect();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    // Points sharing a recall value share the envelope of the earliest one.
    for k in 1..env.len() {
        if pts[k].recall == pts[k - 1].recall {
            env[k] = env[k - 1];
        }
    }
    env
}

/// Area under the enveloped curve as a Riemann sum over recall increments.
///
/// Returns `None` when the class has no ground truth; such a class is
/// skipped by mAP rather than scored 0.
pub fn average_precision(curve: &PrCurve) -> Option<f64> {
    if curve.total_gt == 0 {
        return None;
    }
    let env = precision_envelope(curve);
    // Recall grows by exactly 1/total_gt at each true positive.
    let mut sum = 0.0;
    let mut prev_tp = 0;
    for (p, e) in curve.points.iter().zip(&env) {
        if p.tp > prev_tp {
            sum += e * (p.tp - prev_tp) as f64;
            prev_tp = p.tp;
        }
    }
    Some(sum / curve.total_gt as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: CellClass,
    pub ap: Option<f64>,
    pub total_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub iou_threshold: f64,
    pub map: f64,
    pub per_class: Vec<ClassAp>,
}

impl MapResult {
    pub fn ap(&self, class: CellClass) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class == class)
            .and_then(|c| c.ap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeResult {
    pub map: f64,
    pub per_threshold: Vec<MapResult>,
}

impl RangeResult {
    /// Mean AP of one class across thresholds; `None` if it has no ground truth.
    pub fn class_mean(&self, class: CellClass) -> Option<f64> {
        let aps: Option<Vec<f64>> = self.per_threshold.iter().map(|m| m.ap(class)).collect();
        aps.filter(|v| !v.is_empty()).map(|v| mean(&v))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One patch with instances sorted canonically and all pairwise IoUs cached.
#[derive(Debug)]
struct Prepared {
    preds: Vec<PredictionInstance>,
    gts: Vec<GroundTruthInstance>,
    /// `ious[p][g]`
    ious: Vec<Vec<f64>>,
}

impl Prepared {
    fn new(sample: &EvalSample) -> Result<Self, EvalError> {
        let mut preds = sample.predictions.clone();
        preds.sort_by(|a, b| rank_order(a.confidence, &a.id, b.confidence, &b.id));
        let mut gts = sample.ground_truth.clone();
        gts.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = std::collections::HashSet::new();
        if let Some(p) = preds.iter().find(|p| !seen.insert(p.id.as_str())) {
            return Err(EvalError::DuplicateId(p.id.clone()));
        }
        if let Some(w) = gts.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(EvalError::DuplicateId(w[0].id.clone()));
        }
        if let Some(first) = preds
            .first()
            .map(|p| p.mask.dims())
            .or_else(|| gts.first().map(|g| g.mask.dims()))
        {
            for dims in preds
                .iter()
                .map(|p| p.mask.dims())
                .chain(gts.iter().map(|g| g.mask.dims()))
            {
                if dims != first {
                    return Err(MaskError::DimensionMismatch(first, dims).into());
                }
            }
        }
        let gt_boxes: Vec<_> = gts.iter().map(|g| g.mask.bbox()).collect();
        let ious = preds
            .iter()
            .map(|p| {
                let pb = p.mask.bbox();
                gts.iter()
                    .zip(&gt_boxes)
                    .map(|(g, gb)| {
                        if boxes_overlap(pb, *gb) {
                            maskops::iou(&p.mask, &g.mask)
                        } else {
                            Ok(0.0)
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Prepared { preds, gts, ious })
    }

    /// Greedy matching for `class`; returns per-prediction outcomes (index
    /// into `preds`, matched gt index, iou) and the matched-gt flags.
    fn greedy(&self, class: CellClass, iou_th: f64, min_conf: f64) -> GreedyOutcome {
        let mut gt_taken = vec![false; self.gts.len()];
        let mut outcomes = Vec::new();
        for (pi, pred) in self.preds.iter().enumerate() {
            if pred.class != class || pred.confidence < min_conf {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in self.gts.iter().enumerate() {
                if gt.class != class || gt_taken[gi] {
                    continue;
                }
                let v = self.ious[pi][gi];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, v)) if v >= iou_th => {
                    gt_taken[gi] = true;
                    outcomes.push((pi, Some((gi, v))));
                }
                _ => outcomes.push((pi, None)),
            }
        }
        GreedyOutcome {
            outcomes,
            gt_taken,
        }
    }
}

struct GreedyOutcome {
    outcomes: Vec<(usize, Option<(usize, f64)>)>,
    gt_taken: Vec<bool>,
}

fn boxes_overlap(a: Option<(u32, u32, u32, u32)>, b: Option<(u32, u32, u32, u32)>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3,
        _ => false,
    }
}

/// Evaluation over a dataset of patches. IoUs are computed once at
/// construction and reused across classes, thresholds, and confidence
/// filters.
#[derive(Debug)]
pub struct Evaluator {
    samples: Vec<Prepared>,
    family: Option<StainKind>,
}

impl Evaluator {
    pub fn new(samples: &[EvalSample]) -> Result<Self, EvalError> {
        let family = common_family(samples.iter().flat_map(|s| {
            s.predictions
                .iter()
                .map(|p| p.class)
                .chain(s.ground_truth.iter().map(|g| g.class))
        }))?;
        let samples = samples
            .par_iter()
            .map(Prepared::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Evaluator { samples, family })
    }

    pub fn family(&self) -> Option<StainKind> {
        self.family
    }

    /// Classes of the dataset's stain family, in canonical order.
    pub fn classes(&self) -> &'static [CellClass] {
        self.family.map(CellClass::classes_of).unwrap_or(&[])
    }

    pub fn gt_count(&self, class: CellClass) -> usize {
        self.samples
            .iter()
            .map(|s| s.gts.iter().filter(|g| g.class == class).count())
            .sum()
    }

    pub fn prediction_count(&self, class: CellClass, min_conf: f64) -> usize {
        self.samples
            .iter()
            .map(|s| {
                s.preds
                    .iter()
                    .filter(|p| p.class == class && p.confidence >= min_conf)
                    .count()
            })
            .sum()
    }

    pub fn match_class(&self, class: CellClass, iou_th: f64) -> MatchResult {
        self.match_class_filtered(class, iou_th, 0.0)
    }

    /// Matches only predictions with confidence >= `min_conf`.
    pub fn match_class_filtered(&self, class: CellClass, iou_th: f64, min_conf: f64) -> MatchResult {
        let mut entries = Vec::new();
        let mut unmatched_gt = Vec::new();
        let mut total_gt = 0;
        for (si, s) in self.samples.iter().enumerate() {
            let g = s.greedy(class, iou_th, min_conf);
            for (pi, m) in g.outcomes {
                let p = &s.preds[pi];
                entries.push(MatchEntry {
                    sample: si,
                    pred_id: p.id.clone(),
                    confidence: p.confidence,
                    label: if m.is_some() { Label::Tp } else { Label::Fp },
                    gt_id: m.map(|(gi, _)| s.gts[gi].id.clone()),
                    iou: m.map(|(_, v)| v),
                });
            }
            for (gi, gt) in s.gts.iter().enumerate() {
                if gt.class == class {
                    total_gt += 1;
                    if !g.gt_taken[gi] {
                        unmatched_gt.push((si, gt.id.clone()));
                    }
                }
            }
        }
        sort_entries(&mut entries);
        MatchResult {
            class,
            iou_threshold: iou_th,
            entries,
            unmatched_gt,
            total_gt,
        }
    }

    pub fn pr_curve(&self, class: CellClass, iou_th: f64) -> PrCurve {
        pr_curve(&self.match_class(class, iou_th)).expect("greedy matching is consistent")
    }

    /// Like [`Evaluator::pr_curve`], except a false positive overlapping an
    /// unmatched ground-truth instance of another class at `iou_th` or more
    /// is dropped from the accumulation. The gap between this curve and the
    /// plain one measures cross-class confusion.
    ///
    /// An other-class instance is unmatched if its own class's matching at
    /// `iou_th` left it over; each one absorbs at most one dropped
    /// prediction.
    pub fn oth_curve(&self, class: CellClass, iou_th: f64) -> PrCurve {
        self.oth_curve_filtered(class, iou_th, 0.0)
    }

    pub fn oth_curve_filtered(&self, class: CellClass, iou_th: f64, min_conf: f64) -> PrCurve {
        let mut kept = Vec::new();
        let mut total_gt = 0;
        for s in &self.samples {
            let own = s.greedy(class, iou_th, min_conf);
            let mut other_free: Vec<bool> = s.gts.iter().map(|g| g.class != class).collect();
            for other in self.classes().iter().filter(|c| **c != class) {
                let g = s.greedy(*other, iou_th, min_conf);
                for (gi, taken) in g.gt_taken.iter().enumerate() {
                    if *taken {
                        other_free[gi] = false;
                    }
                }
            }
            total_gt += s.gts.iter().filter(|g| g.class == class).count();
            for (pi, m) in own.outcomes {
                let p = &s.preds[pi];
                if m.is_some() {
                    kept.push((p.confidence, p.id.clone(), Label::Tp));
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for (gi, free) in other_free.iter().enumerate() {
                    if !free {
                        continue;
                    }
                    let v = s.ious[pi][gi];
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((gi, v));
                    }
                }
                match best {
                    Some((gi, v)) if v >= iou_th => other_free[gi] = false,
                    _ => kept.push((p.confidence, p.id.clone(), Label::Fp)),
                }
            }
        }
        // Stable sort keeps sample order among full ties.
        kept.sort_by(|a, b| rank_order(a.0, &a.1, b.0, &b.1));
        curve_from_labels(kept.into_iter().map(|(c, _, l)| (c, l)), total_gt)
            .expect("greedy matching is consistent")
    }

    pub fn map_at(&self, iou_th: f64) -> Result<MapResult, EvalError> {
        self.map_at_filtered(iou_th, 0.0)
    }

    pub fn map_at_filtered(&self, iou_th: f64, min_conf: f64) -> Result<MapResult, EvalError> {
        let per_class: Vec<ClassAp> = self
            .classes()
            .iter()
            .map(|&class| {
                let m = self.match_class_filtered(class, iou_th, min_conf);
                let curve = pr_curve(&m)?;
                Ok(ClassAp {
                    class,
                    ap: average_precision(&curve),
                    total_gt: m.total_gt,
                    tp: m.true_positives(),
                    fp: m.false_positives(),
                })
            })
            .collect::<Result<_, EvalError>>()?;
        let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
        if aps.is_empty() {
            return Err(EvalError::EmptyDataset);
        }
        Ok(MapResult {
            iou_threshold: iou_th,
            map: mean(&aps),
            per_class,
        })
    }

    pub fn map_range(&self, thresholds: &[f64]) -> Result<RangeResult, EvalError> {
        self.map_range_filtered(thresholds, 0.0)
    }

    pub fn map_range_filtered(
        &self,
        thresholds: &[f64],
        min_conf: f64,
    ) -> Result<RangeResult, EvalError> {
        if thresholds.is_empty() {
            return Err(DomainError::InvalidThresholds("empty list".into()).into());
        }
        let per_threshold = thresholds
            .par_iter()
            .map(|&t| self.map_at_filtered(t, min_conf))
            .collect::<Result<Vec<_>, _>>()?;
        let maps: Vec<f64> = per_threshold.iter().map(|m| m.map).collect();
        Ok(RangeResult {
            map: mean(&maps),
            per_threshold,
        })
    }
}

fn sort_entries(entries: &mut [MatchEntry]) {
    entries.sort_by(|a, b| {
        rank_order(a.confidence, &a.pred_id, b.confidence, &b.pred_id)
            .then_with(|| a.sample.cmp(&b.sample))
    });
}

/// Matches one patch's predictions of `class` against its ground truth.
pub fn match_instances(
    preds: &[PredictionInstance],
    gts: &[GroundTruthInstance],
    class: CellClass,
    iou_th: f64,
) -> Result<MatchResult, EvalError> {
    Ok(single(preds, gts)?.match_class(class, iou_th))
}

/// mAP at one IoU threshold over a single patch.
pub fn map_at(
    preds: &[PredictionInstance],
    gts: &[GroundTruthInstance],
    iou_th: f64,
) -> Result<MapResult, EvalError> {
    single(preds, gts)?.map_at(iou_th)
}

/// mAP averaged over the ten thresholds 0.50:0.05:0.95 for a single patch.
pub fn map_range(
    preds: &[PredictionInstance],
    gts: &[GroundTruthInstance],
) -> Result<RangeResult, EvalError> {
    single(preds, gts)?.map_range(&crate::domain::default_iou_thresholds())
}

pub fn oth_curve(
    preds: &[PredictionInstance],
    gts: &[GroundTruthInstance],
    class: CellClass,
    iou_th: f64,
) -> Result<PrCurve, EvalError> {
    Ok(single(preds, gts)?.oth_curve(class, iou_th))
}

fn single(
    preds: &[PredictionInstance],
    gts: &[GroundTruthInstance],
) -> Result<Evaluator, EvalError> {
    Evaluator::new(&[EvalSample {
        key: String::new(),
        predictions: preds.to_vec(),
        ground_truth: gts.to_vec(),
    }])
}
