//! Text detection behind one interface.
//!
//! Backends return provider-shaped detections through [`TextDetector::detect_raw`];
//! [`detect_text`] normalises them (non-empty tokens, confidences in `[0, 1]`, boxes
//! clamped to the image, reading order) so callers never branch on backend kind.

mod cloud;
mod replay;
pub mod sevenseg;

pub use cloud::{CloudA, CloudB, InFlightLimit};
pub use replay::ReplayBackend;
pub use sevenseg::{GlyphLayout, SevenSegBackend};

use crate::imaging::{ImagingError, RasterImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum OcrError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("no replay fixture for image digest {0}")]
    FixtureMiss(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }
}

/// One recognised token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextDetection {
    pub text: String,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
    pub bbox: BBox,
}

fn full_confidence() -> f64 {
    1.0
}

impl TextDetection {
    pub fn new(text: impl Into<String>, confidence: f64, bbox: BBox) -> Self {
        Self { text: text.into(), confidence, bbox }
    }
}

/// What a backend is asked to read.
///
/// `source_digest` identifies the image as it was originally stored, before any
/// in-memory degradation, so replay fixtures keep matching degraded variants.
#[derive(Debug, Clone, Copy)]
pub struct DetectRequest<'a> {
    pub image: &'a RasterImage,
    pub encoded: Option<&'a [u8]>,
    pub source_digest: &'a str,
}

pub trait TextDetector: Send + Sync {
    fn name(&self) -> &str;

    fn detect_raw(&self, req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError>;
}

pub fn detect_text(backend: &dyn TextDetector, req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError> {
    let raw = backend.detect_raw(req)?;
    Ok(normalize_detections(raw, req.image.width(), req.image.height()))
}

/// Drops blank tokens, clamps confidences and boxes, sorts top-to-bottom then
/// left-to-right.
pub fn normalize_detections(raw: Vec<TextDetection>, width: u32, height: u32) -> Vec<TextDetection> {
    let (wf, hf) = (width as f64, height as f64);
    let mut out: Vec<TextDetection> = raw
        .into_iter()
        .filter_map(|mut d| {
            d.text = d.text.trim().to_string();
            if d.text.is_empty() {
                return None;
            }
            d.confidence = if d.confidence.is_nan() { 0.0 } else { d.confidence.clamp(0.0, 1.0) };
            let x0 = d.bbox.x.clamp(0.0, wf - 1.0);
            let y0 = d.bbox.y.clamp(0.0, hf - 1.0);
            let x1 = (d.bbox.x + d.bbox.w).clamp(x0 + 1.0, wf);
            let y1 = (d.bbox.y + d.bbox.h).clamp(y0 + 1.0, hf);
            d.bbox = BBox::new(x0, y0, x1 - x0, y1 - y0);
            Some(d)
        })
        .collect();
    out.sort_by(|a, b| {
        a.bbox
            .y
            .total_cmp(&b.bbox.y)
            .then(a.bbox.x.total_cmp(&b.bbox.x))
            .then_with(|| a.text.cmp(&b.text))
    });
    out
}

/// Splits a line-level token on whitespace, dividing its box by character offset.
pub fn split_line(text: &str, confidence: f64, bbox: BBox) -> Vec<TextDetection> {
    let total = text.chars().count().max(1) as f64;
    let mut out = Vec::new();
    let mut offset = 0usize;
    let chars: Vec<char> = text.chars().collect();
    while offset < chars.len() {
        if chars[offset].is_whitespace() {
            offset += 1;
            continue;
        }
        let start = offset;
        while offset < chars.len() && !chars[offset].is_whitespace() {
            offset += 1;
        }
        let word: String = chars[start..offset].iter().collect();
        let x = bbox.x + bbox.w * start as f64 / total;
        let w = bbox.w * (offset - start) as f64 / total;
        out.push(TextDetection::new(word, confidence, BBox::new(x, bbox.y, w, bbox.h)));
    }
    out
}

/// SHA-256 of the encoded bytes, lowercase hex.
pub fn image_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[serde(alias = "clouda", alias = "gcv")]
    CloudA,
    #[serde(alias = "cloudb", alias = "rekognition")]
    CloudB,
    Replay,
    #[serde(alias = "seven_seg")]
    Sevenseg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the secret, never the secret itself.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    15_000
}

fn default_backoff_ms() -> u64 {
    250
}

pub const CLOUD_A_DEFAULT_ENDPOINT: &str = "https://vision.googleapis.com";
pub const CLOUD_B_DEFAULT_ENDPOINT: &str = "https://rekognition.us-east-1.amazonaws.com";
pub const CLOUD_A_DEFAULT_ENV: &str = "METERPIPE_CLOUDA_KEY";
pub const CLOUD_B_DEFAULT_ENV: &str = "METERPIPE_CLOUDB_KEY";

impl BackendConfig {
    fn bare(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            credential_env: None,
            fixture_path: None,
            region: None,
            threshold: None,
            max_in_flight: default_in_flight(),
            timeout_ms: default_timeout_ms(),
            retry_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn sevenseg() -> Self {
        Self::bare(BackendKind::Sevenseg)
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        Self { fixture_path: Some(path.into()), ..Self::bare(BackendKind::Replay) }
    }

    pub fn cloud(kind: BackendKind, endpoint: impl Into<String>, credential_env: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            credential_env: Some(credential_env.into()),
            ..Self::bare(kind)
        }
    }

    /// Parses the short CLI forms `sevenseg`, `replay:PATH`, `clouda` and `cloudb`.
    pub fn from_short_name(name: &str) -> Result<Self, OcrError> {
        if let Some(path) = name.strip_prefix("replay:") {
            return Ok(Self::replay(path));
        }
        match name {
            "sevenseg" => Ok(Self::sevenseg()),
            "clouda" => Ok(Self::cloud(BackendKind::CloudA, CLOUD_A_DEFAULT_ENDPOINT, CLOUD_A_DEFAULT_ENV)),
            "cloudb" => Ok(Self::cloud(BackendKind::CloudB, CLOUD_B_DEFAULT_ENDPOINT, CLOUD_B_DEFAULT_ENV)),
            other => Err(OcrError::Config(format!("unknown backend `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<(), OcrError> {
        match self.kind {
            BackendKind::CloudA | BackendKind::CloudB => {
                if self.endpoint.is_none() || self.credential_env.is_none() {
                    return Err(OcrError::Config("cloud backends need endpoint and credential_env".into()));
                }
            }
            BackendKind::Replay if self.fixture_path.is_none() => {
                return Err(OcrError::Config("replay backend needs fixture_path".into()));
            }
            _ => {}
        }
        if self.max_in_flight == 0 {
            return Err(OcrError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn TextDetector>, OcrError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Sevenseg => {
                let mut b = SevenSegBackend::new(GlyphLayout::default());
                if let Some(t) = self.threshold {
                    b = b.with_threshold(t);
                }
                Box::new(b)
            }
            BackendKind::Replay => Box::new(ReplayBackend::load(self.fixture_path.as_ref().unwrap())?),
            BackendKind::CloudA => Box::new(CloudA::new(self)?),
            BackendKind::CloudB => Box::new(CloudB::new(self)?),
        })
    }
}
