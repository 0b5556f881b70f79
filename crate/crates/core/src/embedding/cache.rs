//! Persistent, content-addressed embedding cache.
//!
//! File layout is a sequence of records, each
//! `u32 record_len | 64 ASCII hex digest | u32 dim | dim × f32`, all
//! little-endian, where `record_len = 68 + 4·dim`. A record whose length
//! field disagrees with its dimension, or that is cut short, marks the rest
//! of the file as corrupt; the valid prefix is kept and the file rewritten.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

const DIGEST_LEN: usize = 64;

/// Stable digest of `(backend id, input kind, input bytes)`.
pub fn cache_key(backend_id: &str, kind: &str, bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backend_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(kind.as_bytes());
    hasher.update([0u8]);
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

fn image_bytes(image: &ImageTensor) -> Vec<u8> {
    let (h, w, c) = image.shape();
    let mut bytes = Vec::with_capacity(24 + image.data().len() * 8);
    for dim in [h, w, c] {
        bytes.extend((dim as u64).to_le_bytes());
    }
    for v in image.data() {
        bytes.extend(v.to_le_bytes());
    }
    bytes
}

fn is_digest(key: &str) -> bool {
    key.len() == DIGEST_LEN && key.bytes().all(|b| b.is_ascii_hexdigit())
}

pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Vec<f32>>>,
    writer: Mutex<Option<File>>,
    recovered: bool,
}

impl EmbeddingCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            recovered: false,
        }
    }

    /// Opens (or creates) the cache file at `path`, recovering from corruption.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut entries = HashMap::new();
        let mut recovered = false;
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(&path)?.read_to_end(&mut bytes)?;
            let (records, corruption) = parse_records(&bytes);
            for (key, values) in records {
                entries.insert(key, values);
            }
            if corruption.is_some() {
                recovered = true;
                let mut file = File::create(&path)?;
                let mut keys: Vec<_> = entries.keys().cloned().collect();
                keys.sort();
                for key in keys {
                    file.write_all(&encode_record(&key, &entries[&key]))?;
                }
                file.flush()?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            recovered,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// True when `open` found a corrupt tail and rewrote the file.
    pub fn recovered_from_corruption(&self) -> bool {
        self.recovered
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached vector for `key`, or runs `compute` and stores it.
    ///
    /// Stored values are 32-bit, so a miss returns the same rounded vector a
    /// later hit would.
    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<EmbeddingVector>,
    ) -> Result<EmbeddingVector> {
        let key = if is_digest(key) {
            key.to_ascii_lowercase()
        } else {
            cache_key("", "key", key.as_bytes())
        };
        if let Some(values) = self.entries.read().expect("cache lock poisoned").get(&key) {
            return Ok(from_f32(values));
        }
        let vector = compute()?;
        let values: Vec<f32> = vector.values().iter().map(|&v| v as f32).collect();

        let mut writer = self.writer.lock().expect("cache writer poisoned");
        let mut entries = self.entries.write().expect("cache lock poisoned");
        if let Some(existing) = entries.get(&key) {
            return Ok(from_f32(existing));
        }
        if let Some(file) = writer.as_mut() {
            file.write_all(&encode_record(&key, &values))?;
            file.flush()?;
        }
        let out = from_f32(&values);
        entries.insert(key, values);
        Ok(out)
    }
}

fn from_f32(values: &[f32]) -> EmbeddingVector {
    let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    EmbeddingVector::from_normalized_unchecked(values)
}

fn encode_record(key: &str, values: &[f32]) -> Vec<u8> {
    let len = DIGEST_LEN + 4 + 4 * values.len();
    let mut out = Vec::with_capacity(4 + len);
    out.extend((len as u32).to_le_bytes());
    out.extend(key.as_bytes());
    out.extend((values.len() as u32).to_le_bytes());
    for v in values {
        out.extend(v.to_le_bytes());
    }
    out
}

/// Parses all valid records; the error describes where corruption began.
fn parse_records(bytes: &[u8]) -> (Vec<(String, Vec<f32>)>, Option<Error>) {
    let mut out = Vec::new();
    let mut pos = 0;
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    while pos < bytes.len() {
        let corrupt = |why: &str| Some(Error::CacheCorrupt(format!("offset {pos}: {why}")));
        if pos + 4 > bytes.len() {
            return (out, corrupt("truncated length field"));
        }
        let len = u32_at(pos);
        if len < DIGEST_LEN + 4 || pos + 4 + len > bytes.len() {
            return (out, corrupt("record length out of range"));
        }
        let body = pos + 4;
        let key = match std::str::from_utf8(&bytes[body..body + DIGEST_LEN]) {
            Ok(k) if is_digest(k) => k.to_string(),
            _ => return (out, corrupt("bad digest")),
        };
        let dim = u32_at(body + DIGEST_LEN);
        if len != DIGEST_LEN + 4 + 4 * dim {
            return (out, corrupt("length does not match dimension"));
        }
        let start = body + DIGEST_LEN + 4;
        let values: Vec<f32> = bytes[start..start + 4 * dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return (out, corrupt("non-finite value"));
        }
        out.push((key, values));
        pos = body + len;
    }
    (out, None)
}

/// Routes a backend's embeddings through a cache.
pub struct CachedEmbedder<'a> {
    backend: &'a dyn EmbeddingBackend,
    cache: &'a EmbeddingCache,
}

impl<'a> CachedEmbedder<'a> {
    pub fn new(backend: &'a dyn EmbeddingBackend, cache: &'a EmbeddingCache) -> Self {
        Self { backend, cache }
    }
}

impl EmbeddingBackend for CachedEmbedder<'_> {
    fn identifier(&self) -> &str {
        self.backend.identifier()
    }

    fn embed_dim(&self) -> usize {
        self.backend.embed_dim()
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<EmbeddingVector> {
        let key = cache_key(self.backend.identifier(), "image", &image_bytes(image));
        self.cache
            .get_or_compute(&key, || self.backend.embed_image(image))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let key = cache_key(self.backend.identifier(), "text", text.as_bytes());
        self.cache.get_or_compute(&key, || self.backend.embed_text(text))
    }
}
