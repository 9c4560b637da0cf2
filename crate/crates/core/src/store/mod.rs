//! File-system persistence.
//!
//! Layout under the store root:
//!
//! ```text
//! slides/{id}/slide.json                  SlideRecord + TilePyramid
//! slides/{id}/tiles/{level}/{tx}_{ty}.png level 0, lossless
//! slides/{id}/tiles/{level}/{tx}_{ty}.jpg coarser levels, quality 90
//! annotations/{patch-key}/v{n}.json       append-only document versions
//! predictions/{id}.json                   uploaded prediction files
//! ```
//!
//! Every file is written to a temporary name first and then moved into
//! place, so readers never observe partial content. Document versions are
//! claimed with a hard link, which fails if the target exists; that makes
//! the version check-and-write atomic across threads and processes.

mod document;
mod manifest;
mod pyramid;

pub use document::{Annotation, AnnotationDocument, DocumentError, Provenance};
pub use manifest::{DatasetManifest, ManifestEntry, ManifestRow, SplitSpec};
pub use pyramid::{
    downsample, encode_tile, LevelInfo, TileFormat, TilePyramid, JPEG_QUALITY, TILE_SIZE,
};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{validate_id, validate_patch, Biomarker, DomainError, PatchRegion, SlideRecord};
use crate::formats::{FormatError, PredictionFile};

/// Largest accepted image side, in pixels.
pub const MAX_DIMENSION: u32 = 1 << 17;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("version conflict on {key}: base version {base}, latest is {latest}")]
    Conflict { key: String, base: u64, latest: u64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("image {width}x{height} exceeds the {MAX_DIMENSION} px limit")]
    DimensionOverflow { width: u32, height: u32 },
    #[error("no annotated documents in the requested split")]
    EmptyDataset,
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("corrupt store file {path}: {source}")]
    Corrupt {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Ingest-time slide metadata; dimensions come from the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub id: String,
    pub biomarker: Biomarker,
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SlideFile {
    record: SlideRecord,
    pyramid: TilePyramid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub bytes: Vec<u8>,
    pub format: TileFormat,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["slides", "annotations", "predictions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn slide_dir(&self, id: &str) -> PathBuf {
        self.root.join("slides").join(id)
    }

    fn tile_path(&self, id: &str, level: u32, tx: u32, ty: u32) -> PathBuf {
        let ext = TileFormat::for_level(level).extension();
        self.slide_dir(id)
            .join("tiles")
            .join(level.to_string())
            .join(format!("{tx}_{ty}.{ext}"))
    }

    fn tmp_path(&self, target: &Path) -> PathBuf {
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let name = format!(
            ".tmp-{}-{}-{}",
            std::process::id(),
            n,
            target.file_name().and_then(|s| s.to_str()).unwrap_or("f")
        );
        target.with_file_name(name)
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let tmp = self.tmp_path(path);
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path, what: &str) -> Result<T, StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(what.to_string()))
            }
            Err(e) => return Err(io_err(path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt {
            path: path.display().to_string(),
            source,
        })
    }

    // --- slides ----------------------------------------------------------

    pub fn ingest_image(
        &self,
        path: &Path,
        meta: &SlideMeta,
    ) -> Result<(SlideRecord, TilePyramid), StoreError> {
        let img = image::ImageReader::open(path)
            .map_err(io_err(path))?
            .with_guessed_format()
            .map_err(io_err(path))?
            .decode()?;
        if img.width() > MAX_DIMENSION || img.height() > MAX_DIMENSION {
            return Err(StoreError::DimensionOverflow {
                width: img.width(),
                height: img.height(),
            });
        }
        self.ingest_rgb(&img.to_rgb8(), meta)
    }

    /// Builds and persists the pyramid. Re-ingesting the same image under the
    /// same id rewrites identical bytes.
    pub fn ingest_rgb(
        &self,
        img: &RgbImage,
        meta: &SlideMeta,
    ) -> Result<(SlideRecord, TilePyramid), StoreError> {
        let (w, h) = img.dimensions();
        if w > MAX_DIMENSION || h > MAX_DIMENSION {
            return Err(StoreError::DimensionOverflow {
                width: w,
                height: h,
            });
        }
        let record = SlideRecord::new(meta.id.clone(), w, h, meta.resolution, meta.biomarker)?;
        let pyramid = TilePyramid::plan(w, h);
        let mut level_img = img.clone();
        for info in &pyramid.levels {
            if info.level > 0 {
                level_img = downsample(&level_img);
            }
            let format = TileFormat::for_level(info.level);
            for ty in 0..info.rows {
                for tx in 0..info.cols {
                    let (x, y, tw, th) = pyramid.tile_rect(info.level, tx, ty).expect("in grid");
                    let tile = image::imageops::crop_imm(&level_img, x, y, tw, th).to_image();
                    let bytes = encode_tile(&tile, format)?;
                    self.write_atomic(&self.tile_path(&record.id, info.level, tx, ty), &bytes)?;
                }
            }
        }
        let file = SlideFile {
            record: record.clone(),
            pyramid: pyramid.clone(),
        };
        let json = serde_json::to_vec_pretty(&file).expect("slide file serializes");
        self.write_atomic(&self.slide_dir(&record.id).join("slide.json"), &json)?;
        Ok((record, pyramid))
    }

    fn slide_file(&self, id: &str) -> Result<SlideFile, StoreError> {
        validate_id(id).map_err(|_| StoreError::NotFound(format!("slide {id:?}")))?;
        self.read_json(
            &self.slide_dir(id).join("slide.json"),
            &format!("slide {id:?}"),
        )
    }

    pub fn slide(&self, id: &str) -> Result<SlideRecord, StoreError> {
        Ok(self.slide_file(id)?.record)
    }

    pub fn pyramid(&self, id: &str) -> Result<TilePyramid, StoreError> {
        Ok(self.slide_file(id)?.pyramid)
    }

    /// All registered slides, sorted by id.
    pub fn slides(&self) -> Result<Vec<SlideRecord>, StoreError> {
        let dir = self.root.join("slides");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if let Some(name) = entry.file_name().to_str() {
                if entry.path().join("slide.json").exists() {
                    out.push(self.slide(name)?);
                }
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn get_tile(&self, id: &str, level: u32, tx: u32, ty: u32) -> Result<Tile, StoreError> {
        let pyramid = self.pyramid(id)?;
        let not_found = || StoreError::NotFound(format!("tile {id}/{level}/{tx}_{ty}"));
        pyramid.tile_rect(level, tx, ty).ok_or_else(not_found)?;
        let path = self.tile_path(id, level, tx, ty);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => not_found(),
            _ => io_err(&path)(e),
        })?;
        Ok(Tile {
            bytes,
            format: TileFormat::for_level(level),
        })
    }

    /// Full-resolution pixels of a patch, stitched from level-0 tiles.
    pub fn read_region(&self, patch: &PatchRegion) -> Result<RgbImage, StoreError> {
        let slide = self.slide(&patch.slide_id)?;
        let violations = validate_patch(patch, &slide);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(StoreError::Invalid(list.join(", ")));
        }
        let mut out = RgbImage::new(patch.width, patch.height);
        let t = TILE_SIZE;
        for ty in patch.y / t..=(patch.y + patch.height - 1) / t {
            for tx in patch.x / t..=(patch.x + patch.width - 1) / t {
                let tile = self.get_tile(&patch.slide_id, 0, tx, ty)?;
                let img = image::load_from_memory(&tile.bytes)?.to_rgb8();
                for (x, y, px) in img.enumerate_pixels() {
                    let (gx, gy) = (tx * t + x, ty * t + y);
                    if gx >= patch.x
                        && gy >= patch.y
                        && gx < patch.x + patch.width
                        && gy < patch.y + patch.height
                    {
                        out.put_pixel(gx - patch.x, gy - patch.y, *px);
                    }
                }
            }
        }
        Ok(out)
    }

    // --- annotation documents ---------------------------------------------

    fn doc_dir(&self, key: &str) -> Result<PathBuf, StoreError> {
        PatchRegion::from_key(key)?;
        Ok(self.root.join("annotations").join(key))
    }

    /// Stored versions of a document, ascending.
    pub fn document_versions(&self, key: &str) -> Result<Vec<u64>, StoreError> {
        let dir = self.doc_dir(key)?;
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut versions: Vec<u64> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()
            })
            .collect();
        versions.sort_unstable();
        Ok(versions)
    }

    /// Appends a new version. `doc.version` must equal the latest stored
    /// version (0 when none exists); returns the new version number.
    pub fn save_document(&self, doc: &AnnotationDocument) -> Result<u64, StoreError> {
        doc.validate()?;
        let key = doc.key();
        if let Ok(slide) = self.slide(&doc.patch.slide_id) {
            let violations = validate_patch(&doc.patch, &slide);
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(StoreError::Invalid(format!("patch {key}: {}", list.join(", "))));
            }
        }
        let dir = self.doc_dir(&key)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let latest = self.document_versions(&key)?.last().copied().unwrap_or(0);
        if doc.version != latest {
            return Err(StoreError::Conflict {
                key,
                base: doc.version,
                latest,
            });
        }
        let version = latest + 1;
        let mut stored = doc.clone();
        stored.version = version;
        stored.saved_at =
            Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true));
        let json = serde_json::to_vec_pretty(&stored).expect("document serializes");

        let target = dir.join(format!("v{version}.json"));
        let tmp = self.tmp_path(&target);
        fs::write(&tmp, &json).map_err(io_err(&tmp))?;
        let linked = fs::hard_link(&tmp, &target);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(version),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Conflict {
                key,
                base: doc.version,
                latest: version,
            }),
            Err(e) => Err(io_err(&target)(e)),
        }
    }

    /// Loads the given version, or the latest when `version` is `None`.
    pub fn load_document(
        &self,
        key: &str,
        version: Option<u64>,
    ) -> Result<AnnotationDocument, StoreError> {
        let version = match version {
            Some(v) => v,
            None => *self
                .document_versions(key)?
                .last()
                .ok_or_else(|| StoreError::NotFound(format!("annotations for {key}")))?,
        };
        let path = self.doc_dir(key)?.join(format!("v{version}.json"));
        self.read_json(&path, &format!("annotations {key} v{version}"))
    }

    /// Keys of every patch with at least one stored document, sorted.
    pub fn document_keys(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("annotations");
        let mut keys: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|k| PatchRegion::from_key(k).is_ok())
            .collect();
        keys.sort();
        let mut out = Vec::new();
        for k in keys {
            if !self.document_versions(&k)?.is_empty() {
                out.push(k);
            }
        }
        Ok(out)
    }

    pub fn export_dataset(&self, split: &SplitSpec) -> Result<DatasetManifest, StoreError> {
        manifest::export(self, split)
    }

    // --- prediction files -------------------------------------------------

    /// Stores a prediction file; the id is derived from its content.
    pub fn put_prediction_file(&self, file: &PredictionFile) -> Result<String, StoreError> {
        file.predictions()?;
        let json = file.to_json();
        let digest = Sha256::digest(json.as_bytes());
        let id: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        let path = self.root.join("predictions").join(format!("{id}.json"));
        if !path.exists() {
            self.write_atomic(&path, json.as_bytes())?;
        }
        Ok(id)
    }

    pub fn prediction_file(&self, id: &str) -> Result<PredictionFile, StoreError> {
        let what = format!("prediction file {id:?}");
        validate_id(id).map_err(|_| StoreError::NotFound(what.clone()))?;
        let path = self.root.join("predictions").join(format!("{id}.json"));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(what)),
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(PredictionFile::from_json(&text)?)
    }
}
