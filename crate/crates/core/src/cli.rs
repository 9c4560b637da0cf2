//! Command-line front end. Exit codes: 0 success, 2 usage, 3 data error.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{segment_nuclei, BaselineParams};
use crate::domain::{default_iou_thresholds, Biomarker, EvaluationConfig, PatchRegion};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::fixtures::{Fixture, FixtureKind};
use crate::formats::PredictionFile;
use crate::pipeline;
use crate::scoring::{sweep_threshold, TauGrid};
use crate::store::{AnnotationDocument, SlideMeta, SplitSpec, Store};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub const STORE_ENV: &str = "IHCQ_STORE";

#[derive(Debug, Parser)]
#[command(name = "ihcq", version, about = "IHC patch quantification and segmentation evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RootArg {
    /// Store directory; the IHCQ_STORE environment variable takes precedence.
    #[arg(long, default_value = "ihcq-store")]
    pub root: PathBuf,
}

impl RootArg {
    fn resolve(&self) -> PathBuf {
        match std::env::var_os(STORE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.root.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile an image into the store as a slide.
    Ingest {
        image: PathBuf,
        #[arg(long)]
        slide_id: String,
        #[arg(long, value_parser = parse_biomarker)]
        biomarker: Biomarker,
        /// Micrometers per pixel.
        #[arg(long, default_value_t = 0.25)]
        resolution: f64,
        #[command(flatten)]
        root: RootArg,
    },
    /// Evaluate prediction files against ground-truth documents.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        /// IoU thresholds for the range mAP (default 0.50..0.95 step 0.05).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        iou: Vec<f64>,
        /// Confidence filter applied before ranking.
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long)]
        title: Option<String>,
        /// Report JSON; PR points go next to it as `<name>.pr.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an annotation document or a prediction file.
    Score {
        #[arg(long)]
        annotations: PathBuf,
        /// Defaults to the model's recommended value (0.3, or 0.6 for Mask R-CNN).
        #[arg(long)]
        tau: Option<f64>,
        /// Stain family, when it cannot be inferred from the cells.
        #[arg(long, value_parser = parse_biomarker)]
        biomarker: Option<Biomarker>,
        #[arg(long)]
        json: bool,
    },
    /// mAP@0.50 as a function of the confidence threshold.
    Sweep {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        /// start:stop:step, inclusive.
        #[arg(long, default_value = "0:1:0.05", value_parser = parse_grid)]
        grid: TauGrid,
        /// CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic patch with known ground truth.
    GenFixtures {
        #[arg(long, value_parser = parse_kind)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the colour-deconvolution baseline on an image.
    Segment {
        image: PathBuf,
        /// Prediction file to write.
        #[arg(long)]
        out: PathBuf,
        /// Patch placement recorded in the file.
        #[arg(long, default_value = "patch")]
        slide_id: String,
        #[arg(long, default_value_t = 0)]
        x: u32,
        #[arg(long, default_value_t = 0)]
        y: u32,
        /// TOML file with baseline parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-class train/test breakdown of the stored annotations.
    Export {
        /// Slides whose patches form the test split.
        #[arg(long, value_delimiter = ',', conflicts_with = "test_fraction")]
        test_slides: Vec<String>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        root: RootArg,
    },
    /// Serve the HTTP API over the store.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// TOML file with baseline parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        root: RootArg,
    },
}

fn parse_biomarker(s: &str) -> std::result::Result<Biomarker, String> {
    s.parse().map_err(|e: crate::domain::DomainError| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<FixtureKind, String> {
    s.parse()
}

fn parse_grid(s: &str) -> std::result::Result<TauGrid, String> {
    TauGrid::parse(s).map_err(|e| e.to_string())
}

/// Parses arguments and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            EXIT_DATA
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    crate::formats::FormatError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}

fn read_document(path: &Path) -> Result<AnnotationDocument> {
    let text = crate::formats::read(path)?;
    serde_json::from_str(&text).map_err(|source| {
        crate::formats::FormatError::Json {
            what: path.display().to_string(),
            source,
        }
        .into()
    })
}

fn load_inputs(pred: &[PathBuf], gt: &[PathBuf]) -> Result<(Vec<PredictionFile>, Vec<AnnotationDocument>)> {
    let preds = pred
        .iter()
        .map(|p| PredictionFile::load(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let gts = gt.iter().map(|p| read_document(p)).collect::<Result<Vec<_>>>()?;
    Ok((preds, gts))
}

fn pr_csv_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}.pr.csv"))
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let mut say = |s: String| {
        let _ = out.write_all(s.as_bytes());
    };
    match command {
        Command::Ingest {
            image,
            slide_id,
            biomarker,
            resolution,
            root,
        } => {
            let store = Store::open(root.resolve())?;
            let meta = SlideMeta {
                id: slide_id,
                biomarker,
                resolution,
            };
            let (record, pyramid) = store.ingest_image(&image, &meta)?;
            say(format!(
                "{}: {}x{} {}\n{}\n",
                record.id,
                record.width,
                record.height,
                record.biomarker,
                pyramid.summary()
            ));
        }
        Command::Evaluate {
            pred,
            gt,
            iou,
            tau,
            title,
            out: path,
        } => {
            let (preds, gts) = load_inputs(&pred, &gt)?;
            let config = EvaluationConfig {
                iou_thresholds: if iou.is_empty() {
                    default_iou_thresholds()
                } else {
                    iou
                },
                confidence_filter: tau,
            };
            let report = pipeline::evaluate(&preds, &gts, &config, title)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(&path, (json + "\n").as_bytes())?;
            let csv = pr_csv_path(&path);
            write_file(&csv, report.pr_csv().as_bytes())?;
            let mut text = report.render_table();
            for m in &report.matches_at_50 {
                text.push_str(&format!(
                    "{} @0.50: TP {} FP {} FN {}\n",
                    m.class,
                    m.true_positives(),
                    m.false_positives(),
                    m.false_negatives()
                ));
            }
            text.push_str(&format!("report: {}\npr points: {}\n", path.display(), csv.display()));
            say(text);
        }
        Command::Score {
            annotations,
            tau,
            biomarker,
            json,
        } => {
            let text = crate::formats::read(&annotations)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|source| crate::formats::FormatError::Json {
                    what: annotations.display().to_string(),
                    source,
                })?;
            let known = biomarker.map(|b| b.stain_kind());
            let report = if value.get("instances").is_some() {
                pipeline::score_predictions(&PredictionFile::from_json(&text)?, known, tau)?
            } else {
                let doc = serde_json::from_value::<AnnotationDocument>(value).map_err(|source| {
                    crate::formats::FormatError::Json {
                        what: annotations.display().to_string(),
                        source,
                    }
                })?;
                doc.validate()?;
                pipeline::score_document(&doc, known, tau)?
            };
            if json {
                say(serde_json::to_string_pretty(&report).expect("report serializes") + "\n");
            } else {
                say(report.render());
            }
        }
        Command::Sweep {
            pred,
            gt,
            grid,
            out: path,
        } => {
            let (preds, gts) = load_inputs(&pred, &gt)?;
            let samples = pipeline::pair_samples(&preds, &gts)?;
            let evaluator = Evaluator::new(&samples)?;
            let result = sweep_threshold(&evaluator, &grid)?;
            write_file(&path, result.to_csv().as_bytes())?;
            let mut text = String::from("tau\tmAP@0.50\n");
            for (t, m) in result.grid.iter().zip(&result.map_50) {
                text.push_str(&format!("{t:.2}\t{m:.4}\n"));
            }
            text.push_str(&format!(
                "best tau {} (mAP@0.50 {:.4})\n",
                result.best_tau, result.best_map
            ));
            say(text);
        }
        Command::GenFixtures {
            kind,
            seed,
            out_dir,
        } => {
            let fx = Fixture::generate(kind, seed);
            let written = fx.write(&out_dir).map_err(|e| io_error(&out_dir, e))?;
            let mut text = format!(
                "{kind} fixture, seed {seed}: {} ground-truth cells\n",
                fx.ground_truth.annotations.len()
            );
            for p in written {
                text.push_str(&format!("  {}\n", p.display()));
            }
            say(text);
        }
        Command::Segment {
            image,
            out: path,
            slide_id,
            x,
            y,
            config,
        } => {
            let params = match config {
                Some(p) => BaselineParams::load(&p)?,
                None => BaselineParams::default(),
            };
            params.validate()?;
            let img = image::open(&image)
                .map_err(crate::store::StoreError::from)?
                .to_rgb8();
            let patch = PatchRegion::new(slide_id, x, y).with_size(img.width(), img.height());
            let preds = segment_nuclei(&img, &params);
            let file = PredictionFile::from_predictions(patch, "baseline", &preds);
            write_file(&path, (file.to_json() + "\n").as_bytes())?;
            say(format!("{} instances -> {}\n", preds.len(), path.display()));
        }
        Command::Export {
            test_slides,
            test_fraction,
            seed,
            out: path,
            root,
        } => {
            let split = match test_fraction {
                Some(f) if (0.0..=1.0).contains(&f) => SplitSpec::Fraction {
                    test_fraction: f,
                    seed,
                },
                Some(f) => return Err(Error::Invalid(format!("test fraction {f} outside [0, 1]"))),
                None => SplitSpec::TestSlides {
                    slides: test_slides.into_iter().collect(),
                },
            };
            let store = Store::open(root.resolve())?;
            let manifest = store.export_dataset(&split)?;
            if let Some(p) = path {
                let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
                write_file(&p, (json + "\n").as_bytes())?;
            }
            say(manifest.render());
        }
        Command::Serve {
            port,
            host,
            config,
            root,
        } => {
            let params = match config {
                Some(p) => BaselineParams::load(&p)?,
                None => BaselineParams::default(),
            };
            params.validate()?;
            let dir = root.resolve();
            let store = Store::open(&dir)?;
            let addr = SocketAddr::new(host, port);
            say(format!("serving {} on http://{addr}\n", dir.display()));
            let _ = out.flush();
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| io_error(&dir, e))?;
            runtime
                .block_on(crate::service::serve(store, params, addr))
                .map_err(|e| io_error(&dir, e))?;
        }
    }
    Ok(())
}
