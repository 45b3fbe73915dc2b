//! Evaluation harness: datasets, synthetic seven-segment corpora, exact-match
//! scoring and backend-by-degradation comparison reports.

mod eval;
mod manifest;
mod report;
mod synth;

pub use eval::{best_numeric_token, evaluate, Accuracy, EvalResult, ScoringMode, Variant};
pub use manifest::{load_manifest, Dataset, DatasetManifest, LoadedEntry, ManifestEntry};
pub use report::{compare, study_suites, ReportMatrix, ReportRow, Suite};
pub use synth::{synth_dataset, SynthOptions};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("manifest image missing: {0}")]
    MissingImage(PathBuf),
    #[error("duplicate manifest id `{0}`")]
    DuplicateId(String),
    #[error("entry `{0}` has no last_reading, required in refined mode")]
    MissingLastReading(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}
