use crate::ocr::image_digest;
use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

/// Image blobs keyed by the SHA-256 hex digest of their bytes.
#[derive(Debug)]
pub enum ImageStore {
    Memory(Mutex<HashMap<String, Vec<u8>>>),
    Dir(PathBuf),
}

fn valid_digest(d: &str) -> bool {
    d.len() == 64 && d.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl ImageStore {
    pub fn memory() -> Self {
        ImageStore::Memory(Mutex::new(HashMap::new()))
    }

    pub fn dir(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path)?;
        Ok(ImageStore::Dir(path))
    }

    /// Stores `bytes` and returns their digest. Writing the same bytes twice is a no-op.
    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let digest = image_digest(bytes);
        match self {
            ImageStore::Memory(m) => {
                m.lock().expect("image lock").entry(digest.clone()).or_insert_with(|| bytes.to_vec());
            }
            ImageStore::Dir(dir) => {
                let path = dir.join(&digest);
                if !path.exists() {
                    let tmp = dir.join(format!("{digest}.tmp"));
                    fs::write(&tmp, bytes)?;
                    fs::rename(&tmp, &path)?;
                }
            }
        }
        Ok(digest)
    }

    pub fn get(&self, digest: &str) -> io::Result<Option<Vec<u8>>> {
        if !valid_digest(digest) {
            return Ok(None);
        }
        match self {
            ImageStore::Memory(m) => Ok(m.lock().expect("image lock").get(digest).cloned()),
            ImageStore::Dir(dir) => match fs::read(dir.join(digest)) {
                Ok(b) => Ok(Some(b)),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(e),
            },
        }
    }

    pub fn contains(&self, digest: &str) -> bool {
        if !valid_digest(digest) {
            return false;
        }
        match self {
            ImageStore::Memory(m) => m.lock().expect("image lock").contains_key(digest),
            ImageStore::Dir(dir) => dir.join(digest).is_file(),
        }
    }
}

/// Content type by magic bytes.
pub fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.first() == Some(&b'P') && matches!(bytes.get(1), Some(b'1'..=b'6')) {
        "image/x-portable-anymap"
    } else {
        "application/octet-stream"
    }
}
