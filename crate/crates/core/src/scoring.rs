//! Clinical quantification: nuclear percent-positivity, HER2 scoring and the
//! confidence-threshold sweep.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CellClass, PredictionInstance, StainKind};
use crate::eval::{EvalError, Evaluator};

/// Recommended confidence cut-off for SOLOv2-style predictors.
pub const SOLOV2_TAU: f64 = 0.3;
/// Recommended confidence cut-off for Mask-RCNN-style predictors.
pub const MASK_RCNN_TAU: f64 = 0.6;

/// Share of tumor cells (in percent) a HER2 category must exceed.
const HER2_CUTOFF_PERCENT: u64 = 10;
/// Distance (in percentage points) from the cut-off that raises the
/// boundary flag.
const BOUNDARY_MARGIN: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("no tumor cells to score")]
    NoCells,
    #[error("{class} is not a {expected} class")]
    WrongFamily { class: CellClass, expected: StainKind },
    #[error("confidence threshold {0} outside [0, 1]")]
    InvalidTau(f64),
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Picks the default τ for a model name: 0.6 for Mask-RCNN-like names,
/// 0.3 otherwise.
pub fn recommended_tau(model: &str) -> f64 {
    let m = model.to_ascii_lowercase().replace(['-', '_', ' '], "");
    if m.contains("maskrcnn") {
        MASK_RCNN_TAU
    } else {
        SOLOV2_TAU
    }
}

fn check_tau(tau: f64) -> Result<(), ScoreError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(ScoreError::InvalidTau(tau))
    }
}

/// Keeps predictions with confidence at least `tau`, preserving order.
pub fn filter_by_confidence(
    preds: &[PredictionInstance],
    tau: f64,
) -> Result<Vec<PredictionInstance>, ScoreError> {
    check_tau(tau)?;
    Ok(preds
        .iter()
        .filter(|p| p.confidence >= tau)
        .cloned()
        .collect())
}

/// Per-class cell counts. Counts merge associatively, so slide-level scores
/// come from summing patch counts before applying any rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts(pub BTreeMap<CellClass, u64>);

impl CellCounts {
    pub fn from_classes<I: IntoIterator<Item = CellClass>>(classes: I) -> Self {
        let mut counts = CellCounts::default();
        for c in classes {
            *counts.0.entry(c).or_default() += 1;
        }
        counts
    }

    pub fn get(&self, class: CellClass) -> u64 {
        self.0.get(&class).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn merge(&mut self, other: &CellCounts) {
        for (c, n) in &other.0 {
            *self.0.entry(*c).or_default() += n;
        }
    }

    fn require_family(&self, family: StainKind) -> Result<(), ScoreError> {
        match self.0.keys().find(|c| c.family() != family) {
            Some(&class) => Err(ScoreError::WrongFamily {
                class,
                expected: family,
            }),
            None => Ok(()),
        }
    }
}

/// Sums patch counts into one slide-level tally.
pub fn aggregate<'a, I: IntoIterator<Item = &'a CellCounts>>(patches: I) -> CellCounts {
    let mut total = CellCounts::default();
    for p in patches {
        total.merge(p);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearScore {
    pub positive_count: u64,
    pub negative_count: u64,
    pub percent_positive: f64,
}

pub fn nuclear_quantify<I: IntoIterator<Item = CellClass>>(
    classes: I,
) -> Result<NuclearScore, ScoreError> {
    nuclear_from_counts(&CellCounts::from_classes(classes))
}

pub fn nuclear_from_counts(counts: &CellCounts) -> Result<NuclearScore, ScoreError> {
    counts.require_family(StainKind::Nuclear)?;
    let pos = counts.get(CellClass::Immunopositive);
    let neg = counts.get(CellClass::Immunonegative);
    let total = pos + neg;
    if total == 0 {
        return Err(ScoreError::NoCells);
    }
    Ok(NuclearScore {
        positive_count: pos,
        negative_count: neg,
        percent_positive: (100 * pos) as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Her2Category {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1+")]
    OnePlus,
    #[serde(rename = "2+")]
    TwoPlus,
    #[serde(rename = "3+")]
    ThreePlus,
}

impl Her2Category {
    pub fn assessment(self) -> Assessment {
        match self {
            Her2Category::Zero | Her2Category::OnePlus => Assessment::Negative,
            Her2Category::TwoPlus => Assessment::Equivocal,
            Her2Category::ThreePlus => Assessment::Positive,
        }
    }
}

impl fmt::Display for Her2Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Her2Category::Zero => "0",
            Her2Category::OnePlus => "1+",
            Her2Category::TwoPlus => "2+",
            Her2Category::ThreePlus => "3+",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assessment {
    Negative,
    Equivocal,
    Positive,
}

impl fmt::Display for Assessment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Her2Score {
    /// Counts for m0, m1, m2, m3.
    pub counts: [u64; 4],
    pub percentages: [f64; 4],
    pub score: Her2Category,
    pub assessment: Assessment,
    /// Set when any category lies within half a point of the 10% cut-off.
    pub boundary_flag: bool,
}

pub fn her2_quantify<I: IntoIterator<Item = CellClass>>(
    classes: I,
) -> Result<Her2Score, ScoreError> {
    her2_from_counts(&CellCounts::from_classes(classes))
}

/// True when `count` exceeds 10% of `total`; exact integer comparison.
fn exceeds_cutoff(count: u64, total: u64) -> bool {
    count * 100 > HER2_CUTOFF_PERCENT * total
}

/// Scoring table, highest score first; the first matching row wins.
pub fn her2_category(counts: [u64; 4]) -> Her2Category {
    let total: u64 = counts.iter().sum();
    let [_, m1, m2, m3] = counts;
    if exceeds_cutoff(m3, total) {
        Her2Category::ThreePlus
    } else if exceeds_cutoff(m2, total) {
        Her2Category::TwoPlus
    } else if exceeds_cutoff(m1, total) {
        Her2Category::OnePlus
    } else {
        Her2Category::Zero
    }
}

pub fn her2_from_counts(counts: &CellCounts) -> Result<Her2Score, ScoreError> {
    counts.require_family(StainKind::Membrane)?;
    let c = CellClass::MEMBRANE.map(|class| counts.get(class));
    let total: u64 = c.iter().sum();
    if total == 0 {
        return Err(ScoreError::NoCells);
    }
    let percentages = c.map(|n| (100 * n) as f64 / total as f64);
    let score = her2_category(c);
    Ok(Her2Score {
        counts: c,
        percentages,
        score,
        assessment: score.assessment(),
        boundary_flag: percentages
            .iter()
            .any(|p| (p - HER2_CUTOFF_PERCENT as f64).abs() <= BOUNDARY_MARGIN),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiomarkerScore {
    Nuclear(NuclearScore),
    Her2(Her2Score),
}

/// Score plus the context needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Model id, `"baseline"`, or `"annotations"`.
    pub provenance: String,
    pub tau: f64,
    pub stain_kind: StainKind,
    pub counts: CellCounts,
    pub score: BiomarkerScore,
}

impl ScoreReport {
    pub fn new(
        provenance: impl Into<String>,
        tau: f64,
        stain_kind: StainKind,
        counts: CellCounts,
    ) -> Result<Self, ScoreError> {
        check_tau(tau)?;
        let score = match stain_kind {
            StainKind::Nuclear => BiomarkerScore::Nuclear(nuclear_from_counts(&counts)?),
            StainKind::Membrane => BiomarkerScore::Her2(her2_from_counts(&counts)?),
        };
        Ok(ScoreReport {
            provenance: provenance.into(),
            tau,
            stain_kind,
            counts,
            score,
        })
    }

    pub fn summary(&self) -> String {
        match &self.score {
            BiomarkerScore::Nuclear(n) => format!(
                "{:.1}% positive ({} positive, {} negative)",
                n.percent_positive, n.positive_count, n.negative_count
            ),
            BiomarkerScore::Her2(h) => format!("{} {}", h.score, h.assessment),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("{}\n", self.summary());
        if let BiomarkerScore::Her2(h) = &self.score {
            for (class, (n, p)) in CellClass::MEMBRANE
                .iter()
                .zip(h.counts.iter().zip(&h.percentages))
            {
                out.push_str(&format!("  {class}: {n} ({p:.1}%)\n"));
            }
            if h.boundary_flag {
                out.push_str("  boundary: a category lies within 0.5 points of the 10% cut-off\n");
            }
        }
        out.push_str(&format!(
            "cells: {}  tau: {}  source: {}\n",
            self.counts.total(),
            self.tau,
            self.provenance
        ));
        out
    }
}

/// Confidence thresholds to sweep: strictly increasing values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid(Vec<f64>);

impl TauGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, ScoreError> {
        if values.is_empty() {
            return Err(ScoreError::InvalidGrid("empty grid".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ScoreError::InvalidGrid(format!("{v} outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScoreError::InvalidGrid("not strictly increasing".into()));
        }
        Ok(TauGrid(values))
    }

    /// Parses `start:stop:step` (inclusive of `stop`).
    pub fn parse(spec: &str) -> Result<Self, ScoreError> {
        let bad = || ScoreError::InvalidGrid(format!("expected start:stop:step, got {spec:?}"));
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Round to 12 decimals so 0.05 steps print as 0.15, not 0.15000000000000002.
        let values = (0..=n)
            .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
            .collect();
        TauGrid::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    pub grid: Vec<f64>,
    pub map_50: Vec<f64>,
    pub best_tau: f64,
    pub best_map: f64,
}

impl ThresholdSweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,map_50\n");
        for (t, m) in self.grid.iter().zip(&self.map_50) {
            out.push_str(&format!("{t},{m}\n"));
        }
        out
    }
}

/// mAP@0.50 at every τ in the grid; the smallest τ wins ties.
pub fn sweep_threshold(
    evaluator: &Evaluator,
    grid: &TauGrid,
) -> Result<ThresholdSweepResult, ScoreError> {
    let map_50 = grid
        .values()
        .iter()
        .map(|&tau| evaluator.map_at_filtered(0.5, tau).map(|m| m.map))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (i, m) in map_50.iter().enumerate() {
        if *m > map_50[best] {
            best = i;
        }
    }
    Ok(ThresholdSweepResult {
        grid: grid.values().to_vec(),
        best_tau: grid.values()[best],
        best_map: map_50[best],
        map_50,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CellClass::*;
    use crate::maskops::BinaryMask;
    use proptest::prelude::*;

    fn classes(spec: &[(CellClass, usize)]) -> Vec<CellClass> {
        spec.iter()
            .flat_map(|(c, n)| std::iter::repeat_n(*c, *n))
            .collect()
    }

    fn dummy(id: &str, conf: f64) -> PredictionInstance {
        PredictionInstance::new(
            id,
            Immunopositive,
            conf,
            BinaryMask::from_runs(2, 1, vec![0, 1, 1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn filter_keeps_at_or_above_tau() {
        let preds = vec![dummy("a", 0.2), dummy("b", 0.35), dummy("c", 0.9)];
        let kept = filter_by_confidence(&preds, 0.3).unwrap();
        let ids: Vec<_> = kept.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(filter_by_confidence(&preds, 0.0).unwrap(), preds);
        assert!(filter_by_confidence(&preds, 1.5).is_err());
    }

    #[test]
    fn recommended_defaults() {
        assert_eq!(recommended_tau("solov2-nuclei"), 0.3);
        assert_eq!(recommended_tau("Mask-RCNN"), 0.6);
        assert_eq!(recommended_tau("mask_rcnn_her2"), 0.6);
    }

    #[test]
    fn nuclear_percentages() {
        let s = nuclear_quantify(classes(&[(Immunopositive, 3), (Immunonegative, 7)])).unwrap();
        assert_eq!(s.percent_positive, 30.0);
        let s = nuclear_quantify(classes(&[(Immunopositive, 4)])).unwrap();
        assert_eq!(s.percent_positive, 100.0);
        let s = nuclear_quantify(classes(&[(Immunopositive, 3), (Immunonegative, 5)])).unwrap();
        assert_eq!(s.percent_positive, 37.5);
        assert_eq!(nuclear_quantify([]), Err(ScoreError::NoCells));
        assert!(matches!(
            nuclear_quantify([M0NoStaining]),
            Err(ScoreError::WrongFamily { .. })
        ));
    }

    #[test]
    fn her2_table_cases() {
        let s = her2_quantify(classes(&[
            (M3IntenseComplete, 12),
            (M2ModerateComplete, 5),
            (M1FaintIncomplete, 3),
            (M0NoStaining, 80),
        ]))
        .unwrap();
        assert_eq!((s.score, s.assessment), (Her2Category::ThreePlus, Assessment::Positive));
        assert!(!s.boundary_flag);

        let s = her2_quantify(classes(&[(M0NoStaining, 100)])).unwrap();
        assert_eq!((s.score, s.assessment), (Her2Category::Zero, Assessment::Negative));

        // Exactly 10% does not exceed the cut-off.
        let s = her2_quantify(classes(&[(M3IntenseComplete, 10), (M0NoStaining, 90)])).unwrap();
        assert_eq!((s.score, s.assessment), (Her2Category::Zero, Assessment::Negative));
        assert!(s.boundary_flag);

        assert_eq!(her2_quantify([]), Err(ScoreError::NoCells));
    }

    #[test]
    fn report_rendering() {
        let counts = CellCounts::from_classes(classes(&[(Immunopositive, 3), (Immunonegative, 7)]));
        let r = ScoreReport::new("baseline", 0.3, StainKind::Nuclear, counts).unwrap();
        assert_eq!(r.summary(), "30.0% positive (3 positive, 7 negative)");
        assert!(r.render().contains("source: baseline"));

        let counts = CellCounts::from_classes(classes(&[(M3IntenseComplete, 12), (M0NoStaining, 88)]));
        let r = ScoreReport::new("m", 0.3, StainKind::Membrane, counts).unwrap();
        assert_eq!(r.summary(), "3+ Positive");
    }

    #[test]
    fn grid_parsing() {
        let g = TauGrid::parse("0:1:0.05").unwrap();
        assert_eq!(g.values().len(), 21);
        assert_eq!(g.values()[3], 0.15);
        assert_eq!(*g.values().last().unwrap(), 1.0);
        assert!(TauGrid::parse("0:1").is_err());
        assert!(TauGrid::parse("0:1:0").is_err());
        assert!(TauGrid::new(vec![]).is_err());
        assert!(TauGrid::new(vec![0.5, 0.2]).is_err());
    }

    #[test]
    fn slide_aggregation_merges_counts() {
        let a = CellCounts::from_classes(classes(&[(Immunopositive, 1), (Immunonegative, 9)]));
        let b = CellCounts::from_classes(classes(&[(Immunopositive, 9), (Immunonegative, 1)]));
        let total = aggregate([&a, &b]);
        assert_eq!(nuclear_from_counts(&total).unwrap().percent_positive, 50.0);
        // Associative regardless of grouping.
        assert_eq!(aggregate([&b, &a]), total);
    }

    proptest! {
        #[test]
        fn filter_monotone(confs in proptest::collection::vec(0.0f64..=1.0, 0..20), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let preds: Vec<_> = confs.iter().enumerate().map(|(i, c)| dummy(&i.to_string(), *c)).collect();
            let strict = filter_by_confidence(&preds, hi).unwrap();
            let loose = filter_by_confidence(&preds, lo).unwrap();
            prop_assert!(strict.iter().all(|p| loose.contains(p)));
        }

        #[test]
        fn scores_ignore_order(mut cs in proptest::collection::vec(0usize..4, 1..60)) {
            let membrane: Vec<_> = cs.iter().map(|i| CellClass::MEMBRANE[*i]).collect();
            let h1 = her2_quantify(membrane.clone()).unwrap();
            let sum: f64 = h1.percentages.iter().sum();
            prop_assert!((sum - 100.0).abs() <= 1e-9);
            cs.reverse();
            let h2 = her2_quantify(cs.iter().map(|i| CellClass::MEMBRANE[*i])).unwrap();
            prop_assert_eq!(h1, h2);

            let nuclear: Vec<_> = cs.iter().map(|i| CellClass::NUCLEAR[i % 2]).collect();
            let n = nuclear_quantify(nuclear.clone()).unwrap();
            prop_assert!((0.0..=100.0).contains(&n.percent_positive));
            let all_one = n.positive_count == 0 || n.negative_count == 0;
            prop_assert_eq!(n.percent_positive == 0.0 || n.percent_positive == 100.0, all_one);
            let mut rev = nuclear;
            rev.reverse();
            prop_assert_eq!(nuclear_quantify(rev).unwrap(), n);
        }
    }
}
