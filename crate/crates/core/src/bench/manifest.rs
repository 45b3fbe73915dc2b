use super::BenchError;
use crate::imaging::{decode_image, RasterImage};
use crate::ocr::image_digest;
use crate::refinement::is_register_value;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: PathBuf,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_reading: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self { entries, base_dir: base_dir.into() }
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.image_path.is_absolute() {
            entry.image_path.clone()
        } else {
            self.base_dir.join(&entry.image_path)
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.entries.is_empty() {
            return Err(BenchError::Parse("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(BenchError::DuplicateId(e.id.clone()));
            }
            if !is_register_value(&e.ground_truth) {
                return Err(BenchError::Parse(format!("entry `{}`: ground_truth must be digits", e.id)));
            }
            if let Some(last) = &e.last_reading {
                if !is_register_value(last) || last.len() != e.ground_truth.len() {
                    return Err(BenchError::Parse(format!("entry `{}`: bad last_reading", e.id)));
                }
            }
            let path = self.resolve(e);
            if !path.is_file() {
                return Err(BenchError::MissingImage(path));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| BenchError::Parse(e.to_string()))?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

/// A manifest entry with its encoded bytes read and decoded once.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub entry: ManifestEntry,
    pub bytes: Vec<u8>,
    pub digest: String,
    pub image: RasterImage,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub entries: Vec<LoadedEntry>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self, BenchError> {
        manifest.validate()?;
        let entries = manifest
            .entries
            .iter()
            .map(|e| {
                let bytes = std::fs::read(manifest.resolve(e))?;
                Ok(LoadedEntry {
                    entry: e.clone(),
                    digest: image_digest(&bytes),
                    image: decode_image(&bytes)?,
                    bytes,
                })
            })
            .collect::<Result<Vec<_>, BenchError>>()?;
        Ok(Self { entries })
    }

    /// Builds a dataset from in-memory images; each is encoded as PNG.
    pub fn from_images(items: Vec<(ManifestEntry, RasterImage)>) -> Result<Self, BenchError> {
        let entries = items
            .into_iter()
            .map(|(entry, image)| {
                let bytes = crate::imaging::encode_png(&image)?;
                Ok(LoadedEntry { entry, digest: image_digest(&bytes), image, bytes })
            })
            .collect::<Result<Vec<_>, BenchError>>()?;
        if entries.is_empty() {
            return Err(BenchError::Parse("dataset has no entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{save_image, RasterImage};

    fn write_manifest(dir: &Path, entries: &[(&str, &str)]) -> PathBuf {
        let img = RasterImage::filled(4, 4, 1, 128).unwrap();
        let mut list = Vec::new();
        for (id, gt) in entries {
            let name = format!("{id}.png");
            save_image(&img, &dir.join(&name)).unwrap();
            list.push(serde_json::json!({"id": id, "image_path": name, "ground_truth": gt}));
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::json!({ "entries": list }).to_string()).unwrap();
        path
    }

    #[test]
    fn loads_thirty_entries() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = (0..30).map(|i| format!("m{i:02}")).collect();
        let entries: Vec<(&str, &str)> = ids.iter().map(|i| (i.as_str(), "01234")).collect();
        let m = load_manifest(&write_manifest(dir.path(), &entries)).unwrap();
        assert_eq!(m.entries.len(), 30);
        assert_eq!(Dataset::load(&m).unwrap().len(), 30);
    }

    #[test]
    fn rejects_duplicates_empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[("a", "1"), ("a", "2")]);
        assert!(matches!(load_manifest(&path), Err(BenchError::DuplicateId(id)) if id == "a"));

        std::fs::write(&path, r#"{"entries": []}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(BenchError::Parse(_))));

        std::fs::write(&path, r#"{"entries": [{"id": "x", "image_path": "gone.png", "ground_truth": "1"}]}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(BenchError::MissingImage(_))));

        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(BenchError::Parse(_))));

        let path = write_manifest(dir.path(), &[("b", "12x")]);
        assert!(matches!(load_manifest(&path), Err(BenchError::Parse(_))));
    }
}
