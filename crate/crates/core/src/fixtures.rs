//! Synthetic patches with known ground truth.
//!
//! * `disks`: well-separated round nuclei, brown (immunopositive) and blue
//!   (immunonegative), painted from the rasterized ground-truth polygons.
//! * `fig5`: three square ground-truth cells and four scored predictions laid
//!   out so greedy matching at IoU 0.5 gives TP, TP, FP, FP.
//! * `spurious`: disk ground truth plus exact predictions and small
//!   low-confidence detections on empty background.
//!
//! Output is a pure function of kind and seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::StainBasis;
use crate::domain::{Biomarker, CellClass, PatchRegion, PredictionInstance, SlideRecord};
use crate::formats::PredictionFile;
use crate::maskops::{rasterize, BinaryMask, Polygon};
use crate::store::{Annotation, AnnotationDocument, Provenance};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const IMAGE_FILE: &str = "patch.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Disks,
    Fig5,
    Spurious,
}

impl FixtureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FixtureKind::Disks => "disks",
            FixtureKind::Fig5 => "fig5",
            FixtureKind::Spurious => "spurious",
        }
    }
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixtureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "disks" => Ok(FixtureKind::Disks),
            "fig5" => Ok(FixtureKind::Fig5),
            "spurious" => Ok(FixtureKind::Spurious),
            _ => Err(format!("unknown fixture kind {s:?}")),
        }
    }
}

/// Layout of a disk fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskSpec {
    pub positive: usize,
    pub negative: usize,
    pub radius: f64,
    pub size: u32,
    /// Minimum gap between disk edges, in pixels.
    pub gap: f64,
}

impl Default for DiskSpec {
    fn default() -> Self {
        DiskSpec {
            positive: 3,
            negative: 5,
            radius: 8.0,
            size: 350,
            gap: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub kind: FixtureKind,
    pub slide: SlideRecord,
    pub image: RgbImage,
    pub ground_truth: AnnotationDocument,
    pub predictions: Option<PredictionFile>,
}

impl Fixture {
    pub fn generate(kind: FixtureKind, seed: u64) -> Fixture {
        match kind {
            FixtureKind::Disks => disks(&DiskSpec::default(), seed),
            FixtureKind::Fig5 => fig5(seed),
            FixtureKind::Spurious => spurious(seed),
        }
    }

    pub fn patch(&self) -> &PatchRegion {
        &self.ground_truth.patch
    }

    /// Writes image, ground truth and (when present) predictions into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let img = dir.join(IMAGE_FILE);
        let png = crate::store::encode_tile(&self.image, crate::store::TileFormat::Png)
            .map_err(std::io::Error::other)?;
        std::fs::write(&img, png)?;
        written.push(img);
        let gt = dir.join(GROUND_TRUTH_FILE);
        let json = serde_json::to_string_pretty(&self.ground_truth).expect("document serializes");
        std::fs::write(&gt, json + "\n")?;
        written.push(gt);
        if let Some(p) = &self.predictions {
            let path = dir.join(PREDICTIONS_FILE);
            std::fs::write(&path, p.to_json() + "\n")?;
            written.push(path);
        }
        Ok(written)
    }
}

fn slide_for(kind: FixtureKind, seed: u64, size: u32) -> SlideRecord {
    SlideRecord::new(
        format!("{kind}-{seed}"),
        size,
        size,
        0.25,
        Biomarker::Ki67,
    )
    .expect("fixture slide is valid")
}

fn annotation(id: String, class: CellClass, polygon: Polygon) -> Annotation {
    Annotation {
        id,
        class,
        polygon,
        provenance: Provenance::Manual,
        confidence: None,
        author: "fixture".into(),
        timestamp: None,
    }
}

/// Stain concentrations used to paint each class.
fn stain_of(class: CellClass) -> (f64, f64) {
    match class {
        CellClass::Immunopositive => (0.2, 0.9),
        _ => (0.8, 0.05),
    }
}

/// Paints a near-white background and each mask in its class colour, with
/// small per-pixel noise.
fn paint(size: (u32, u32), cells: &[(CellClass, &BinaryMask)], rng: &mut ChaCha8Rng) -> RgbImage {
    let basis = StainBasis::default();
    let background = basis.render(0.02, 0.01);
    let mut colour = vec![background; (size.0 * size.1) as usize];
    for (class, mask) in cells {
        let (h, d) = stain_of(*class);
        let c = basis.render(h, d);
        for (start, end) in mask.intervals() {
            for i in start..end {
                colour[i as usize] = c;
            }
        }
    }
    RgbImage::from_fn(size.0, size.1, |x, y| {
        let base = colour[(y * size.0 + x) as usize];
        image::Rgb(base.map(|v| (i16::from(v) + rng.gen_range(-3i16..=3)).clamp(0, 255) as u8))
    })
}

fn place_disks(spec: &DiskSpec, count: usize, taken: &mut Vec<(f64, f64, f64)>, rng: &mut ChaCha8Rng, radius: f64) -> Vec<(f64, f64)> {
    let margin = radius + 4.0;
    let hi = f64::from(spec.size) - margin;
    let mut out = Vec::new();
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..10_000 {
            let cx = rng.gen_range(margin..hi).floor() + 0.5;
            let cy = rng.gen_range(margin..hi).floor() + 0.5;
            let clear = taken.iter().all(|&(x, y, r)| {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                d >= r + radius + spec.gap
            });
            if clear {
                taken.push((cx, cy, radius));
                out.push((cx, cy));
                placed = true;
                break;
            }
        }
        assert!(placed, "disk fixture too crowded");
    }
    out
}

pub fn disks(spec: &DiskSpec, seed: u64) -> Fixture {
    disks_with(FixtureKind::Disks, spec, seed)
}

fn disks_with(kind: FixtureKind, spec: &DiskSpec, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slide = slide_for(kind, seed, spec.size);
    let patch = PatchRegion::new(&slide.id, 0, 0).with_size(spec.size, spec.size);
    let mut taken = Vec::new();
    let centres = place_disks(spec, spec.positive + spec.negative, &mut taken, &mut rng, spec.radius);
    let mut doc = AnnotationDocument::new(patch);
    for (i, (cx, cy)) in centres.into_iter().enumerate() {
        let class = if i < spec.positive {
            CellClass::Immunopositive
        } else {
            CellClass::Immunonegative
        };
        let poly = Polygon::circle(cx, cy, spec.radius, 32).expect("circle");
        doc.annotations.push(annotation(format!("n{i:02}"), class, poly));
    }
    let gt = doc.ground_truth().expect("fixture polygons rasterize");
    let cells: Vec<_> = gt.iter().map(|g| (g.class, &g.mask)).collect();
    let image = paint((spec.size, spec.size), &cells, &mut rng);
    Fixture {
        kind,
        slide,
        image,
        ground_truth: doc,
        predictions: None,
    }
}

/// Ground-truth squares `(id, x, y, side)`.
const FIG5_GT: [(&str, u32, u32, u32); 3] = [("GTA", 5, 5, 10), ("GTB", 30, 5, 10), ("GTC", 5, 40, 10)];
/// Predictions `(id, confidence, x, y, side)`.
const FIG5_PRED: [(&str, f64, u32, u32, u32); 4] = [
    ("P1", 0.55, 45, 45, 8),
    ("P2", 0.90, 6, 5, 10),
    ("P3", 0.70, 30, 6, 10),
    ("P4", 0.60, 36, 5, 10),
];

fn square(x: u32, y: u32, side: u32) -> Polygon {
    Polygon::rect(f64::from(x), f64::from(y), f64::from(side), f64::from(side)).expect("square")
}

pub fn fig5(seed: u64) -> Fixture {
    let size = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slide = slide_for(FixtureKind::Fig5, seed, size);
    let patch = PatchRegion::new(&slide.id, 0, 0).with_size(size, size);
    let mut doc = AnnotationDocument::new(patch.clone());
    for (id, x, y, side) in FIG5_GT {
        doc.annotations
            .push(annotation(id.into(), CellClass::Immunopositive, square(x, y, side)));
    }
    let preds: Vec<PredictionInstance> = FIG5_PRED
        .iter()
        .map(|&(id, conf, x, y, side)| {
            let mask = rasterize(&square(x, y, side), size, size).expect("in bounds");
            PredictionInstance::new(id, CellClass::Immunopositive, conf, mask).expect("valid")
        })
        .collect();
    let gt = doc.ground_truth().expect("squares rasterize");
    let cells: Vec<_> = gt.iter().map(|g| (g.class, &g.mask)).collect();
    let image = paint((size, size), &cells, &mut rng);
    Fixture {
        kind: FixtureKind::Fig5,
        slide,
        image,
        ground_truth: doc,
        predictions: Some(PredictionFile::from_predictions(patch, "fig5", &preds)),
    }
}

/// Disk ground truth, every cell detected exactly, plus spurious detections
/// on background. Cell confidences are mostly high; a few are low enough to
/// interleave with the spurious ones.
pub fn spurious(seed: u64) -> Fixture {
    let spec = DiskSpec {
        positive: 4,
        negative: 6,
        ..DiskSpec::default()
    };
    let mut fx = disks_with(FixtureKind::Spurious, &spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let size = spec.size;
    let mut taken: Vec<(f64, f64, f64)> = fx
        .ground_truth
        .annotations
        .iter()
        .map(|a| {
            let v = a.polygon.vertices();
            let cx = v.iter().map(|p| p[0]).sum::<f64>() / v.len() as f64;
            let cy = v.iter().map(|p| p[1]).sum::<f64>() / v.len() as f64;
            (cx, cy, spec.radius)
        })
        .collect();
    let mut preds = Vec::new();
    for (i, g) in fx.ground_truth.ground_truth().expect("disks").into_iter().enumerate() {
        let conf = if i % 5 == 4 {
            rng.gen_range(0.15..0.35)
        } else {
            rng.gen_range(0.55..0.95)
        };
        preds.push(PredictionInstance::new(format!("c{i:02}"), g.class, conf, g.mask).expect("valid"));
    }
    let centres = place_disks(&spec, 6, &mut taken, &mut rng, 4.0);
    for (i, (cx, cy)) in centres.into_iter().enumerate() {
        let class = if i % 2 == 0 {
            CellClass::Immunopositive
        } else {
            CellClass::Immunonegative
        };
        let mask = rasterize(&Polygon::circle(cx, cy, 4.0, 16).expect("circle"), size, size)
            .expect("in bounds");
        let conf = rng.gen_range(0.05..0.3);
        preds.push(PredictionInstance::new(format!("s{i:02}"), class, conf, mask).expect("valid"));
    }
    fx.predictions = Some(PredictionFile::from_predictions(
        fx.ground_truth.patch.clone(),
        "spurious",
        &preds,
    ));
    fx
}
