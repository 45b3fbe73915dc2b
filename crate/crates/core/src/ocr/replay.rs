use super::{DetectRequest, OcrError, TextDetection, TextDetector};
use std::collections::BTreeMap;
use std::path::Path;

/// Serves recorded detections keyed by image digest.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    name: String,
    fixtures: BTreeMap<String, Vec<TextDetection>>,
}

impl Default for ReplayBackend {
    fn default() -> Self {
        Self::from_map(BTreeMap::new())
    }
}

impl ReplayBackend {
    pub fn from_map(fixtures: BTreeMap<String, Vec<TextDetection>>) -> Self {
        Self { name: "replay".into(), fixtures }
    }

    pub fn load(path: &Path) -> Result<Self, OcrError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OcrError::Config(format!("cannot read fixture {}: {e}", path.display())))?;
        let fixtures = serde_json::from_str(&text)
            .map_err(|e| OcrError::Config(format!("bad fixture {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| format!("replay:{}", s.to_string_lossy()))
            .unwrap_or_else(|| "replay".into());
        Ok(Self { name, fixtures })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn insert(&mut self, digest: impl Into<String>, detections: Vec<TextDetection>) {
        self.fixtures.insert(digest.into(), detections);
    }

    pub fn fixtures(&self) -> &BTreeMap<String, Vec<TextDetection>> {
        &self.fixtures
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.fixtures).expect("fixtures serialize")
    }
}

impl TextDetector for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect_raw(&self, req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError> {
        self.fixtures
            .get(req.source_digest)
            .cloned()
            .ok_or_else(|| OcrError::FixtureMiss(req.source_digest.to_string()))
    }
}
