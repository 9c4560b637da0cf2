//! Shared vocabulary: slides, patches, cell classes, prediction instances and
//! evaluation configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maskops::BinaryMask;

/// Default patch edge length in pixels.
pub const DEFAULT_PATCH_SIZE: u32 = 350;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid slide record: {0}")]
    InvalidSlide(String),
    #[error("invalid identifier {0:?}: expected [A-Za-z0-9._-]+")]
    InvalidId(String),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("prediction {0:?} has an empty mask")]
    EmptyMask(String),
    #[error("classes from both nuclear and membrane families in one patch")]
    MixedFamilies,
    #[error("invalid IoU thresholds: {0}")]
    InvalidThresholds(String),
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
    #[error("malformed patch key {0:?}")]
    MalformedKey(String),
}

/// Family of a stain: nuclear markers stain the nucleus, HER2 the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainKind {
    Nuclear,
    Membrane,
}

impl fmt::Display for StainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StainKind::Nuclear => "nuclear",
            StainKind::Membrane => "membrane",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Biomarker {
    #[serde(rename = "Ki-67")]
    Ki67,
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "HER2")]
    Her2,
}

impl Biomarker {
    pub fn stain_kind(self) -> StainKind {
        match self {
            Biomarker::Her2 => StainKind::Membrane,
            _ => StainKind::Nuclear,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Biomarker::Ki67 => "Ki-67",
            Biomarker::Er => "ER",
            Biomarker::Pr => "PR",
            Biomarker::Her2 => "HER2",
        }
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Biomarker {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ki67" => Ok(Biomarker::Ki67),
            "er" => Ok(Biomarker::Er),
            "pr" => Ok(Biomarker::Pr),
            "her2" => Ok(Biomarker::Her2),
            _ => Err(DomainError::Unknown {
                kind: "biomarker",
                value: s.to_string(),
            }),
        }
    }
}

/// Tumor cell categories. Non-tumor cells have no class and never appear in
/// stores or scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Immunopositive,
    Immunonegative,
    M0NoStaining,
    M1FaintIncomplete,
    M2ModerateComplete,
    M3IntenseComplete,
}

impl CellClass {
    pub const NUCLEAR: [CellClass; 2] = [CellClass::Immunopositive, CellClass::Immunonegative];
    pub const MEMBRANE: [CellClass; 4] = [
        CellClass::M0NoStaining,
        CellClass::M1FaintIncomplete,
        CellClass::M2ModerateComplete,
        CellClass::M3IntenseComplete,
    ];

    pub fn family(self) -> StainKind {
        match self {
            CellClass::Immunopositive | CellClass::Immunonegative => StainKind::Nuclear,
            _ => StainKind::Membrane,
        }
    }

    pub fn classes_of(kind: StainKind) -> &'static [CellClass] {
        match kind {
            StainKind::Nuclear => &Self::NUCLEAR,
            StainKind::Membrane => &Self::MEMBRANE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellClass::Immunopositive => "immunopositive",
            CellClass::Immunonegative => "immunonegative",
            CellClass::M0NoStaining => "m0_no_staining",
            CellClass::M1FaintIncomplete => "m1_faint_incomplete",
            CellClass::M2ModerateComplete => "m2_moderate_complete",
            CellClass::M3IntenseComplete => "m3_intense_complete",
        }
    }

    /// Human-readable legend label, as used in report rows.
    pub fn label(self) -> &'static str {
        match self {
            CellClass::Immunopositive => "Immunopositive cells",
            CellClass::Immunonegative => "Immunonegative cells",
            CellClass::M0NoStaining => "0: No membrane staining",
            CellClass::M1FaintIncomplete => {
                "1+: Barely perceptible and incomplete membrane staining"
            }
            CellClass::M2ModerateComplete => "2+: Weak to moderate and complete membrane staining",
            CellClass::M3IntenseComplete => {
                "3+: Circumferential, intense and complete membrane staining"
            }
        }
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellClass {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = CellClass::NUCLEAR.iter().chain(CellClass::MEMBRANE.iter());
        all.copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| DomainError::Unknown {
                kind: "cell class",
                value: s.to_string(),
            })
    }
}

/// Returns the single stain family shared by `classes`, `None` when empty.
pub fn common_family<I>(classes: I) -> Result<Option<StainKind>, DomainError>
where
    I: IntoIterator<Item = CellClass>,
{
    let mut family = None;
    for class in classes {
        match family {
            None => family = Some(class.family()),
            Some(f) if f != class.family() => return Err(DomainError::MixedFamilies),
            _ => {}
        }
    }
    Ok(family)
}

pub(crate) fn validate_id(id: &str) -> Result<(), DomainError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
        && id != "."
        && id != "..";
    if ok {
        Ok(())
    } else {
        Err(DomainError::InvalidId(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Micrometers per pixel at level 0.
    pub resolution: f64,
    pub stain_kind: StainKind,
    pub biomarker: Biomarker,
}

impl SlideRecord {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        resolution: f64,
        biomarker: Biomarker,
    ) -> Result<Self, DomainError> {
        let record = SlideRecord {
            id: id.into(),
            width,
            height,
            resolution,
            stain_kind: biomarker.stain_kind(),
            biomarker,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        validate_id(&self.id)?;
        if self.width == 0 || self.height == 0 {
            return Err(DomainError::InvalidSlide("zero dimension".into()));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(DomainError::InvalidSlide(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        if self.biomarker.stain_kind() != self.stain_kind {
            return Err(DomainError::InvalidSlide(format!(
                "{} is not a {} stain",
                self.biomarker, self.stain_kind
            )));
        }
        Ok(())
    }
}

/// Rectangular region of a slide, in level-0 pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRegion {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PatchRegion {
    pub fn new(slide_id: impl Into<String>, x: u32, y: u32) -> Self {
        PatchRegion {
            slide_id: slide_id.into(),
            x,
            y,
            width: DEFAULT_PATCH_SIZE,
            height: DEFAULT_PATCH_SIZE,
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Filesystem- and URL-safe key: `{slide}_{x}_{y}_{w}x{h}`.
    pub fn key(&self) -> String {
        format!(
            "{}_{}_{}_{}x{}",
            self.slide_id, self.x, self.y, self.width, self.height
        )
    }

    pub fn from_key(key: &str) -> Result<Self, DomainError> {
        let bad = || DomainError::MalformedKey(key.to_string());
        let mut parts = key.rsplitn(4, '_');
        let size = parts.next().ok_or_else(bad)?;
        let y = parts.next().ok_or_else(bad)?;
        let x = parts.next().ok_or_else(bad)?;
        let slide_id = parts.next().ok_or_else(bad)?;
        let (w, h) = size.split_once('x').ok_or_else(bad)?;
        validate_id(slide_id).map_err(|_| bad())?;
        Ok(PatchRegion {
            slide_id: slide_id.to_string(),
            x: x.parse().map_err(|_| bad())?,
            y: y.parse().map_err(|_| bad())?,
            width: w.parse().map_err(|_| bad())?,
            height: h.parse().map_err(|_| bad())?,
        })
    }
}

/// Invariant violation reported by [`validate_patch`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyPatch,
    ExceedsBounds,
    SlideMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::EmptyPatch => "empty patch",
            Violation::ExceedsBounds => "exceeds bounds",
            Violation::SlideMismatch => "slide mismatch",
        })
    }
}

/// Lists every invariant the patch breaks with respect to `slide`. An empty
/// list means the patch is valid.
pub fn validate_patch(patch: &PatchRegion, slide: &SlideRecord) -> Vec<Violation> {
    let mut violations = Vec::new();
    if patch.slide_id != slide.id {
        violations.push(Violation::SlideMismatch);
    }
    if patch.width == 0 || patch.height == 0 {
        violations.push(Violation::EmptyPatch);
    }
    let right = u64::from(patch.x) + u64::from(patch.width);
    let bottom = u64::from(patch.y) + u64::from(patch.height);
    if right > u64::from(slide.width) || bottom > u64::from(slide.height) {
        violations.push(Violation::ExceedsBounds);
    }
    violations
}

/// One segmenter output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInstance {
    pub id: String,
    pub class: CellClass,
    pub confidence: f64,
    pub mask: BinaryMask,
}

impl PredictionInstance {
    pub fn new(
        id: impl Into<String>,
        class: CellClass,
        confidence: f64,
        mask: BinaryMask,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DomainError::InvalidConfidence(confidence));
        }
        if mask.area() == 0 {
            return Err(DomainError::EmptyMask(id));
        }
        Ok(PredictionInstance {
            id,
            class,
            confidence,
            mask,
        })
    }
}

/// Expert-annotated instance, already rasterized.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub id: String,
    pub class: CellClass,
    pub mask: BinaryMask,
}

/// The ten COCO-style IoU thresholds 0.50, 0.55, ..., 0.95.
///
/// Built as `k / 20` so each value is the nearest double to its decimal
/// literal (repeatedly adding 0.05 would drift, e.g. to 0.6000000000000001).
pub fn default_iou_thresholds() -> Vec<f64> {
    (10..20).map(|k| f64::from(k) / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub iou_thresholds: Vec<f64>,
    /// Predictions below this confidence are dropped before ranking.
    pub confidence_filter: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            iou_thresholds: default_iou_thresholds(),
            confidence_filter: 0.0,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.iou_thresholds.is_empty() {
            return Err(DomainError::InvalidThresholds("empty list".into()));
        }
        if let Some(t) = self
            .iou_thresholds
            .iter()
            .find(|t| !(**t > 0.0 && **t <= 1.0))
        {
            return Err(DomainError::InvalidThresholds(format!("{t} outside (0, 1]")));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DomainError::InvalidThresholds(
                "not strictly increasing".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence_filter) {
            return Err(DomainError::InvalidConfidence(self.confidence_filter));
        }
        Ok(())
    }
}

/// Deterministic ranking key: confidence descending, then id ascending.
pub fn rank_order(a_conf: f64, a_id: &str, b_conf: f64, b_id: &str) -> std::cmp::Ordering {
    b_conf.total_cmp(&a_conf).then_with(|| a_id.cmp(b_id))
}
