//! Quantification and evaluation workbench for immunohistochemistry patches.
//!
//! Start with [`eval`] for instance-segmentation metrics, [`scoring`] for
//! biomarker scores, and [`store`] for slides and versioned annotations.
//! The `examples/` directory has one runnable program per capability.

pub mod baseline;
pub mod cli;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod formats;
pub mod maskops;
pub mod pipeline;
pub mod scoring;
pub mod service;
pub mod store;

pub use domain::{
    Biomarker, CellClass, EvaluationConfig, GroundTruthInstance, PatchRegion, PredictionInstance,
    SlideRecord, StainKind,
};
pub use error::{Error, ErrorKind, Result};
pub use maskops::{BinaryMask, Polygon};
