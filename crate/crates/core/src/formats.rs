//! Prediction file: the only way a segmentation model talks to this crate.
//!
//! ```json
//! {"patch": {...}, "model": "solov2",
//!  "instances": [{"class": "immunopositive", "confidence": 0.91,
//!                 "mask": {"size": [h, w], "runs": [...]}}]}
//! ```
//!
//! Instances may carry an optional `"id"`; otherwise ids are assigned from
//! the position in the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{common_family, CellClass, DomainError, PatchRegion, PredictionInstance};
use crate::maskops::BinaryMask;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {what}: {source}")]
    Json {
        what: String,
        source: serde_json::Error,
    },
    #[error("instance {index}: mask is {got:?}, patch is {expected:?}")]
    MaskSize {
        index: usize,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("instance {index}: {source}")]
    Instance { index: usize, source: DomainError },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub class: CellClass,
    pub confidence: f64,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub patch: PatchRegion,
    pub model: String,
    pub instances: Vec<PredictionRecord>,
}

impl PredictionFile {
    pub fn from_predictions(
        patch: PatchRegion,
        model: impl Into<String>,
        preds: &[PredictionInstance],
    ) -> Self {
        PredictionFile {
            patch,
            model: model.into(),
            instances: preds
                .iter()
                .map(|p| PredictionRecord {
                    id: Some(p.id.clone()),
                    class: p.class,
                    confidence: p.confidence,
                    mask: p.mask.clone(),
                })
                .collect(),
        }
    }

    /// Validated prediction instances.
    pub fn predictions(&self) -> Result<Vec<PredictionInstance>, FormatError> {
        common_family(self.instances.iter().map(|r| r.class))?;
        let expected = (self.patch.width, self.patch.height);
        self.instances
            .iter()
            .enumerate()
            .map(|(index, r)| {
                if r.mask.dims() != expected {
                    return Err(FormatError::MaskSize {
                        index,
                        got: r.mask.dims(),
                        expected,
                    });
                }
                let id = r.id.clone().unwrap_or_else(|| format!("p{index:05}"));
                PredictionInstance::new(id, r.class, r.confidence, r.mask.clone())
                    .map_err(|source| FormatError::Instance { index, source })
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let file: PredictionFile =
            serde_json::from_str(text).map_err(|source| FormatError::Json {
                what: "prediction file".into(),
                source,
            })?;
        file.predictions()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_json(&read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prediction file serializes")
    }
}

pub(crate) fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_json(runs: &str, class: &str, conf: f64) -> String {
        format!(
            r#"{{"patch":{{"slide_id":"s","x":0,"y":0,"width":3,"height":2}},"model":"m",
                "instances":[{{"class":"{class}","confidence":{conf},"mask":{{"size":[2,3],"runs":{runs}}}}}]}}"#
        )
    }

    #[test]
    fn parses_and_assigns_ids() {
        let f = PredictionFile::from_json(&file_json("[0,2,4]", "immunopositive", 0.5)).unwrap();
        let preds = f.predictions().unwrap();
        assert_eq!(preds[0].id, "p00000");
        assert_eq!(preds[0].mask.area(), 2);
        let back = PredictionFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(PredictionFile::from_json(&file_json("[0,2,3]", "immunopositive", 0.5)).is_err());
        assert!(PredictionFile::from_json(&file_json("[6]", "immunopositive", 0.5)).is_err());
        assert!(PredictionFile::from_json(&file_json("[0,2,4]", "immunopositive", 1.5)).is_err());
        assert!(PredictionFile::from_json(&file_json("[0,2,4]", "stroma", 0.5)).is_err());
    }
}
