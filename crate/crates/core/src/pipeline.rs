//! Glue shared by the HTTP service and the CLI: pre-segmentation, pairing
//! predictions with ground truth, evaluation and scoring.

use std::collections::BTreeMap;

use crate::domain::{common_family, EvaluationConfig, PatchRegion, PredictionInstance, StainKind};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, EvalSample, Evaluator};
use crate::formats::PredictionFile;
use crate::maskops::outline;
use crate::scoring::{filter_by_confidence, CellCounts, ScoreError, ScoreReport, SOLOV2_TAU};
use crate::store::{Annotation, AnnotationDocument, Provenance};

/// Converts predictions into an unsaved document of model annotations.
/// Each mask becomes the traced outline of its first connected component.
pub fn presegment(
    patch: &PatchRegion,
    predictions: &[PredictionInstance],
    author: &str,
) -> AnnotationDocument {
    let mut doc = AnnotationDocument::new(patch.clone());
    for p in predictions {
        if let Some(polygon) = outline(&p.mask) {
            doc.annotations.push(Annotation {
                id: p.id.clone(),
                class: p.class,
                polygon,
                provenance: Provenance::Model,
                confidence: Some(p.confidence),
                author: author.to_string(),
                timestamp: None,
            });
        }
    }
    doc
}

/// Pairs prediction files with ground-truth documents by patch key. A single
/// file and a single document are paired regardless of key. Documents
/// without predictions contribute misses; predictions without a document
/// are an error.
pub fn pair_samples(
    predictions: &[PredictionFile],
    ground_truth: &[AnnotationDocument],
) -> Result<Vec<EvalSample>> {
    let mut samples: BTreeMap<String, EvalSample> = BTreeMap::new();
    for doc in ground_truth {
        let key = doc.key();
        if samples.contains_key(&key) {
            return Err(Error::Invalid(format!("ground truth for {key} given twice")));
        }
        doc.validate()?;
        samples.insert(
            key.clone(),
            EvalSample {
                key,
                predictions: Vec::new(),
                ground_truth: doc.ground_truth()?,
            },
        );
    }
    let single = predictions.len() == 1 && ground_truth.len() == 1;
    for file in predictions {
        let key = if single {
            ground_truth[0].key()
        } else {
            file.patch.key()
        };
        let sample = samples
            .get_mut(&key)
            .ok_or_else(|| Error::Invalid(format!("no ground truth for patch {}", file.patch.key())))?;
        sample.predictions.extend(file.predictions()?);
    }
    Ok(samples.into_values().collect())
}

fn common_model(files: &[PredictionFile]) -> Option<String> {
    let first = files.first()?;
    files
        .iter()
        .all(|f| f.model == first.model)
        .then(|| first.model.clone())
}

pub fn evaluate(
    predictions: &[PredictionFile],
    ground_truth: &[AnnotationDocument],
    config: &EvaluationConfig,
    title: Option<String>,
) -> Result<EvalReport> {
    config.validate()?;
    let samples = pair_samples(predictions, ground_truth)?;
    let evaluator = Evaluator::new(&samples)?;
    Ok(EvalReport::build(
        &evaluator,
        title,
        common_model(predictions),
        config.confidence_filter,
        &config.iou_thresholds,
    )?)
}

/// Resolves the stain family from the slide (when known) or from the
/// classes present. No cells at all is an empty-dataset error.
fn stain_kind_of(
    known: Option<StainKind>,
    classes: impl IntoIterator<Item = crate::domain::CellClass>,
) -> Result<StainKind> {
    match (known, common_family(classes)?) {
        (Some(k), _) | (None, Some(k)) => Ok(k),
        (None, None) => Err(ScoreError::NoCells.into()),
    }
}

/// Scores an annotation document. Annotations without a confidence count
/// as 1.0.
pub fn score_document(
    doc: &AnnotationDocument,
    known: Option<StainKind>,
    tau: Option<f64>,
) -> Result<ScoreReport> {
    let tau = tau.unwrap_or(SOLOV2_TAU);
    let kind = stain_kind_of(known, doc.annotations.iter().map(|a| a.class))?;
    let kept = doc
        .scored_cells()
        .filter(|(_, c)| *c >= tau)
        .map(|(class, _)| class);
    let counts = CellCounts::from_classes(kept);
    Ok(ScoreReport::new("annotations", tau, kind, counts)?)
}

/// Scores a prediction file; τ defaults to the model's recommended value.
pub fn score_predictions(
    file: &PredictionFile,
    known: Option<StainKind>,
    tau: Option<f64>,
) -> Result<ScoreReport> {
    let preds = file.predictions()?;
    let tau = tau.unwrap_or_else(|| crate::scoring::recommended_tau(&file.model));
    let kind = stain_kind_of(known, preds.iter().map(|p| p.class))?;
    let kept = filter_by_confidence(&preds, tau)?;
    let counts = CellCounts::from_classes(kept.iter().map(|p| p.class));
    Ok(ScoreReport::new(file.model.clone(), tau, kind, counts)?)
}
