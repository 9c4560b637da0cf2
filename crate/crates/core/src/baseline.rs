//! Deterministic classical segmenter: optical-density stain separation,
//! per-stain thresholding and 4-connected components.
//!
//! It emits nuclear classes only. It exists so the scoring and evaluation
//! pipeline runs end to end without a trained model; touching nuclei of the
//! same stain merge into one component.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CellClass, PredictionInstance};
use crate::maskops::{encode, Bitmap};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid baseline parameters: {0}")]
    InvalidParams(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing baseline config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Unit optical-density directions of the two stains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StainBasis {
    pub hematoxylin: [f64; 3],
    pub dab: [f64; 3],
}

impl Default for StainBasis {
    /// Ruifrok & Johnston hematoxylin/DAB vectors.
    fn default() -> Self {
        StainBasis {
            hematoxylin: normalize([0.650, 0.704, 0.286]),
            dab: normalize([0.268, 0.570, 0.776]),
        }
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    v.map(|x| x / n)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl StainBasis {
    /// Least-squares unmixing matrix `(BᵀB)⁻¹Bᵀ` for `B = [h d]`, or `None`
    /// when the vectors are (nearly) collinear.
    fn unmixing(&self) -> Option<[[f64; 3]; 2]> {
        let (h, d) = (self.hematoxylin, self.dab);
        let (hh, hd, dd) = (dot(h, h), dot(h, d), dot(d, d));
        let det = hh * dd - hd * hd;
        if det.abs() < 1e-9 {
            return None;
        }
        let mut m = [[0.0; 3]; 2];
        for c in 0..3 {
            m[0][c] = (dd * h[c] - hd * d[c]) / det;
            m[1][c] = (hh * d[c] - hd * h[c]) / det;
        }
        Some(m)
    }

    /// RGB color rendered by the given stain concentrations, inverting the
    /// optical-density transform.
    pub fn render(&self, hematoxylin: f64, dab: f64) -> [u8; 3] {
        std::array::from_fn(|c| {
            let od = hematoxylin * self.hematoxylin[c] + dab * self.dab[c];
            let v = 256.0 * (-od).exp() - 1.0;
            v.round().clamp(0.0, 255.0) as u8
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub hematoxylin_threshold: f64,
    pub dab_threshold: f64,
    pub min_area: u64,
    pub max_area: u64,
    /// Optical density that maps to confidence 1.0.
    pub confidence_scale: f64,
    pub basis: StainBasis,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            hematoxylin_threshold: 0.35,
            dab_threshold: 0.35,
            min_area: 30,
            max_area: 5000,
            confidence_scale: 1.5,
            basis: StainBasis::default(),
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidParams(m.to_string()));
        if !(self.hematoxylin_threshold > 0.0 && self.dab_threshold > 0.0) {
            return bad("thresholds must be positive");
        }
        if !(0 < self.min_area && self.min_area < self.max_area) {
            return bad("need 0 < min_area < max_area");
        }
        if !(self.confidence_scale > 0.0) {
            return bad("confidence_scale must be positive");
        }
        if self.basis.unmixing().is_none() {
            return bad("stain basis vectors are collinear");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, BaselineError> {
        let mut params: BaselineParams = toml::from_str(text)?;
        params.basis.hematoxylin = normalize(params.basis.hematoxylin);
        params.basis.dab = normalize(params.basis.dab);
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// Per-pixel stain concentrations in optical-density units, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StainMaps {
    pub width: u32,
    pub height: u32,
    pub hematoxylin_od: Vec<f64>,
    pub dab_od: Vec<f64>,
}

/// Optical density of one 8-bit channel value.
#[inline]
pub fn optical_density(v: u8) -> f64 {
    -((f64::from(v) + 1.0) / 256.0).ln()
}

/// Projects each pixel's optical density onto the stain basis (least squares),
/// clamping negative concentrations to zero.
pub fn separate_stains(rgb: &RgbImage, basis: &StainBasis) -> StainMaps {
    let m = basis
        .unmixing()
        .unwrap_or_else(|| StainBasis::default().unmixing().expect("default basis"));
    let n = rgb.width() as usize * rgb.height() as usize;
    let mut hematoxylin_od = Vec::with_capacity(n);
    let mut dab_od = Vec::with_capacity(n);
    for px in rgb.pixels() {
        let od = px.0.map(optical_density);
        hematoxylin_od.push(dot(m[0], od).max(0.0));
        dab_od.push(dot(m[1], od).max(0.0));
    }
    StainMaps {
        width: rgb.width(),
        height: rgb.height(),
        hematoxylin_od,
        dab_od,
    }
}

/// Segments hematoxylin (immunonegative) and DAB (immunopositive) nuclei.
/// Output is ordered by each component's first pixel in row-major order.
pub fn segment_nuclei(rgb: &RgbImage, params: &BaselineParams) -> Vec<PredictionInstance> {
    let maps = separate_stains(rgb, &params.basis);
    let (w, h) = (maps.width as usize, maps.height as usize);
    let fg: Vec<bool> = maps
        .hematoxylin_od
        .iter()
        .zip(&maps.dab_od)
        .map(|(hm, d)| *hm > params.hematoxylin_threshold || *d > params.dab_threshold)
        .collect();

    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if fg[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let area = pixels.len() as u64;
        if area < params.min_area || area > params.max_area {
            continue;
        }
        let n = pixels.len() as f64;
        let mean_h = pixels.iter().map(|&i| maps.hematoxylin_od[i]).sum::<f64>() / n;
        let mean_d = pixels.iter().map(|&i| maps.dab_od[i]).sum::<f64>() / n;
        let positive = mean_d / params.dab_threshold > mean_h / params.hematoxylin_threshold;
        let (class, dominant) = if positive {
            (CellClass::Immunopositive, mean_d)
        } else {
            (CellClass::Immunonegative, mean_h)
        };
        let mut bitmap = Bitmap::new(maps.width, maps.height);
        for &i in &pixels {
            bitmap.bits[i] = true;
        }
        let confidence = (dominant / params.confidence_scale).clamp(0.0, 1.0);
        let id = format!("b{:04}", out.len());
        out.push(
            PredictionInstance::new(id, class, confidence, encode(&bitmap))
                .expect("component is non-empty and confidence clamped"),
        );
    }
    out
}
