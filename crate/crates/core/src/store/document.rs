use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{common_family, CellClass, DomainError, GroundTruthInstance, PatchRegion};
use crate::maskops::{rasterize, MaskError, Polygon};

/// Where an annotation came from: drawn by hand, proposed by a model, or a
/// model proposal a human edited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    Model,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub class: CellClass,
    pub polygon: Polygon,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default)]
    pub author: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Versioned annotation set for one patch. `version` is the base version on
/// save (0 for a new document) and the stored version on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub patch: PatchRegion,
    #[serde(default)]
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saved_at: Option<String>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DocumentError {
    #[error("duplicate annotation id {0:?}")]
    DuplicateId(String),
    #[error("annotation id must not be empty")]
    EmptyId,
    #[error("model annotation {0:?} lacks a confidence")]
    MissingConfidence(String),
    #[error("annotation {id:?}: {source}")]
    Geometry { id: String, source: MaskError },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl AnnotationDocument {
    pub fn new(patch: PatchRegion) -> Self {
        AnnotationDocument {
            patch,
            version: 0,
            saved_at: None,
            annotations: Vec::new(),
        }
    }

    pub fn key(&self) -> String {
        self.patch.key()
    }

    pub fn validate(&self) -> Result<(), DocumentError> {
        crate::domain::validate_id(&self.patch.slide_id)?;
        let mut ids = HashSet::new();
        for a in &self.annotations {
            if a.id.is_empty() {
                return Err(DocumentError::EmptyId);
            }
            if !ids.insert(a.id.as_str()) {
                return Err(DocumentError::DuplicateId(a.id.clone()));
            }
            match a.confidence {
                None if a.provenance == Provenance::Model => {
                    return Err(DocumentError::MissingConfidence(a.id.clone()))
                }
                Some(c) if !(0.0..=1.0).contains(&c) => {
                    return Err(DomainError::InvalidConfidence(c).into())
                }
                _ => {}
            }
            a.polygon
                .check_bounds(self.patch.width, self.patch.height)
                .map_err(|source| DocumentError::Geometry {
                    id: a.id.clone(),
                    source,
                })?;
        }
        common_family(self.annotations.iter().map(|a| a.class))?;
        Ok(())
    }

    /// Rasterizes every annotation in the patch frame.
    pub fn ground_truth(&self) -> Result<Vec<GroundTruthInstance>, DocumentError> {
        self.annotations
            .iter()
            .map(|a| {
                let mask = rasterize(&a.polygon, self.patch.width, self.patch.height).map_err(
                    |source| DocumentError::Geometry {
                        id: a.id.clone(),
                        source,
                    },
                )?;
                Ok(GroundTruthInstance {
                    id: a.id.clone(),
                    class: a.class,
                    mask,
                })
            })
            .collect()
    }

    /// Class and confidence of each annotation, for scoring. Annotations
    /// without a confidence are expert-confirmed and count as 1.0.
    pub fn scored_cells(&self) -> impl Iterator<Item = (CellClass, f64)> + '_ {
        self.annotations
            .iter()
            .map(|a| (a.class, a.confidence.unwrap_or(1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(id: &str, provenance: Provenance, confidence: Option<f64>) -> Annotation {
        Annotation {
            id: id.into(),
            class: CellClass::Immunopositive,
            polygon: Polygon::rect(1.0, 1.0, 4.0, 4.0).unwrap(),
            provenance,
            confidence,
            author: "path1".into(),
            timestamp: None,
        }
    }

    fn doc(anns: Vec<Annotation>) -> AnnotationDocument {
        AnnotationDocument {
            annotations: anns,
            ..AnnotationDocument::new(PatchRegion::new("s1", 0, 0).with_size(16, 16))
        }
    }

    #[test]
    fn valid_document() {
        let d = doc(vec![
            ann("a", Provenance::Manual, None),
            ann("b", Provenance::Model, Some(0.4)),
        ]);
        d.validate().unwrap();
        let gt = d.ground_truth().unwrap();
        assert_eq!(gt[0].mask.area(), 16);
    }

    #[test]
    fn invalid_documents() {
        let dup = doc(vec![ann("a", Provenance::Manual, None), ann("a", Provenance::Manual, None)]);
        assert_eq!(dup.validate(), Err(DocumentError::DuplicateId("a".into())));
        let no_conf = doc(vec![ann("m", Provenance::Model, None)]);
        assert!(matches!(no_conf.validate(), Err(DocumentError::MissingConfidence(_))));
        let mut out = ann("o", Provenance::Manual, None);
        out.polygon = Polygon::rect(10.0, 10.0, 10.0, 10.0).unwrap();
        assert!(matches!(doc(vec![out]).validate(), Err(DocumentError::Geometry { .. })));
        let mut mixed = ann("x", Provenance::Manual, None);
        mixed.class = CellClass::M1FaintIncomplete;
        assert!(matches!(
            doc(vec![ann("a", Provenance::Manual, None), mixed]).validate(),
            Err(DocumentError::Domain(DomainError::MixedFamilies))
        ));
    }

    #[test]
    fn json_shape() {
        let d = doc(vec![ann("b", Provenance::Model, Some(0.4))]);
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v["annotations"][0]["provenance"], "model");
        assert_eq!(v["annotations"][0]["class"], "immunopositive");
        assert_eq!(v["annotations"][0]["polygon"][0], serde_json::json!([1.0, 1.0]));
        let back: AnnotationDocument = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
        let bad = r#"{"patch":{"slide_id":"s","x":0,"y":0,"width":4,"height":4},
            "annotations":[{"id":"a","class":"immunopositive","polygon":[[0,0],[1,1]],"provenance":"manual"}]}"#;
        assert!(serde_json::from_str::<AnnotationDocument>(bad).is_err());
    }
}
