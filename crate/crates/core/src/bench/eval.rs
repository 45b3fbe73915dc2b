use super::{BenchError, Dataset, LoadedEntry};
use crate::imaging::{apply_spec, DegradationSpec};
use crate::ocr::{detect_text, DetectRequest, OcrError, TextDetection, TextDetector};
use crate::refinement::{refine, MeterContext};
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Longest digit run among the detections.
    Raw,
    /// Refinement against the entry's last reading.
    Refined { max_delta: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    Original,
    Degraded(DegradationSpec),
}

impl Variant {
    pub fn kind_label(&self) -> String {
        match self {
            Variant::Original => "original".into(),
            Variant::Degraded(s) => s.kind.to_string(),
        }
    }

    pub fn level_label(&self) -> String {
        match self {
            Variant::Original => String::new(),
            Variant::Degraded(s) => format!("{}", s.level),
        }
    }
}

/// `correct / total * 100`, held as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Accuracy(Ratio<u64>);

impl Accuracy {
    pub fn new(correct: u64, total: u64) -> Self {
        assert!(total >= 1 && correct <= total, "accuracy needs 0 <= correct <= total, total >= 1");
        Self(Ratio::new(correct * 100, total))
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Tenths of a percent, rounded half up.
    pub fn tenths(&self) -> u64 {
        let (n, d) = (*self.0.numer(), *self.0.denom());
        (20 * n + d) / (2 * d)
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        write!(f, "{}.{}", t / 10, t % 10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub backend: String,
    pub variant: Variant,
    pub correct_results: u64,
    pub total: u64,
    /// Entries whose detection call failed; they count as incorrect.
    pub failures: u64,
}

impl EvalResult {
    pub fn accuracy(&self) -> Accuracy {
        Accuracy::new(self.correct_results, self.total)
    }
}

/// Longest digit run over all tokens; ties go to higher confidence, then reading
/// order.
pub fn best_numeric_token(detections: &[TextDetection]) -> Option<String> {
    let mut best: Option<(usize, f64, String)> = None;
    for d in detections {
        for run in d.text.split(|c: char| !c.is_ascii_digit()).filter(|r| !r.is_empty()) {
            let better = match &best {
                None => true,
                Some((len, conf, _)) => run.len() > *len || (run.len() == *len && d.confidence > *conf),
            };
            if better {
                best = Some((run.len(), d.confidence, run.to_string()));
            }
        }
    }
    best.map(|b| b.2)
}

fn entry_seed(seed: u64, id: &str) -> u64 {
    let h = Sha256::new().chain_update(seed.to_be_bytes()).chain_update(id.as_bytes()).finalize();
    u64::from_be_bytes(h[..8].try_into().unwrap())
}

enum Outcome {
    Correct,
    Wrong,
    Failed,
}

fn score_entry(
    backend: &dyn TextDetector,
    item: &LoadedEntry,
    spec: Option<&DegradationSpec>,
    mode: ScoringMode,
) -> Result<Outcome, OcrError> {
    let degraded;
    let (image, encoded) = match spec {
        Some(s) if !s.is_identity() => {
            let per_entry = s.with_seed(entry_seed(s.seed, &item.entry.id));
            degraded = apply_spec(&item.image, &per_entry)?;
            (&degraded, None)
        }
        _ => (&item.image, Some(item.bytes.as_slice())),
    };
    let req = DetectRequest { image, encoded, source_digest: &item.digest };
    let detections = detect_text(backend, &req)?;
    let reading = match mode {
        ScoringMode::Raw => best_numeric_token(&detections),
        ScoringMode::Refined { max_delta } => {
            let last = item.entry.last_reading.as_deref().unwrap_or_default();
            let ctx = MeterContext::new(last, max_delta).map_err(|e| OcrError::Config(e.to_string()))?;
            Some(refine(&detections, &ctx).reading)
        }
    };
    Ok(match reading {
        Some(r) if r == item.entry.ground_truth => Outcome::Correct,
        _ => Outcome::Wrong,
    })
}

/// Exact-match accuracy of one backend on one dataset variant. Per-entry backend
/// errors are logged and scored as incorrect.
pub fn evaluate(
    backend: &dyn TextDetector,
    dataset: &Dataset,
    spec: Option<&DegradationSpec>,
    mode: ScoringMode,
) -> Result<EvalResult, BenchError> {
    if dataset.is_empty() {
        return Err(BenchError::Parse("dataset has no entries".into()));
    }
    if let Some(s) = spec {
        s.validate()?;
    }
    if matches!(mode, ScoringMode::Refined { .. }) {
        if let Some(e) = dataset.entries.iter().find(|e| e.entry.last_reading.is_none()) {
            return Err(BenchError::MissingLastReading(e.entry.id.clone()));
        }
    }
    let outcomes: Vec<Outcome> = dataset
        .entries
        .par_iter()
        .map(|item| {
            score_entry(backend, item, spec, mode).unwrap_or_else(|e| {
                log::warn!("{} on `{}`: {e}", backend.name(), item.entry.id);
                Outcome::Failed
            })
        })
        .collect();
    let correct = outcomes.iter().filter(|o| matches!(o, Outcome::Correct)).count() as u64;
    let failures = outcomes.iter().filter(|o| matches!(o, Outcome::Failed)).count() as u64;
    Ok(EvalResult {
        backend: backend.name().to_string(),
        variant: spec.map_or(Variant::Original, |s| Variant::Degraded(*s)),
        correct_results: correct,
        total: dataset.len() as u64,
        failures,
    })
}
