//! Shared text/image embedding space.
//!
//! Every vector that reaches a distance or similarity computation is unit
//! normalized, so L2 distances live on `[0, 2]` regardless of backend.

mod cache;
pub(crate) mod toy;

pub use cache::{cache_key, CachedEmbedder, EmbeddingCache};
pub use toy::{ToyEmbedder, TOY_EMBED_DIM};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values without normalizing. Non-finite entries are rejected.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("embedding has non-finite entries".into()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Scales `values` to unit L2 norm.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        Self::raw(values)?.normalize()
    }

    pub fn normalize(self) -> Result<Self> {
        let norm = l2_norm(&self.values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        let values = self.values.into_iter().map(|v| v / norm).collect();
        Ok(Self {
            values,
            normalized: true,
        })
    }

    /// Multiplies every entry by `factor`; the result is not flagged normalized.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            normalized: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Arithmetic mean of unit-normalized inputs, re-normalized.
    pub fn mean_of(vectors: &[EmbeddingVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyImageSet)?;
        let dim = first.dim();
        let mut acc = vec![0.0; dim];
        for v in vectors {
            check_dims(dim, v.dim())?;
            let v = if v.normalized {
                v.clone()
            } else {
                v.clone().normalize()?
            };
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        // Cancelling unit vectors leave rounding residue, not a direction.
        if l2_norm(&acc) < 1e-9 {
            return Err(Error::ZeroVector);
        }
        Self::unit(acc)
    }

    pub(crate) fn from_normalized_unchecked(values: Vec<f64>) -> Self {
        debug_assert!((l2_norm(&values) - 1.0).abs() < NORM_TOLERANCE);
        Self {
            values,
            normalized: true,
        }
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// A text/image encoder into one shared space.
///
/// Implementations must be deterministic and immutable once constructed.
pub trait EmbeddingBackend: Send + Sync {
    fn identifier(&self) -> &str;
    fn embed_dim(&self) -> usize;
    fn embed_image(&self, image: &ImageTensor) -> Result<EmbeddingVector>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Selects a backend by its config identifier (`embedding.backend`).
pub fn backend_from_id(id: &str) -> Result<Box<dyn EmbeddingBackend>> {
    match id {
        "toy" => Ok(Box::new(ToyEmbedder::new())),
        // Pretrained vision-language weights are not bundled; callers that
        // have a runtime for them implement `EmbeddingBackend` directly.
        "vit-b-16" | "ViT-B/16" | "resnet50x64" | "RN50x64" => {
            Err(Error::BackendUnavailable(id.to_string()))
        }
        other => Err(Error::Config(format!("unknown embedding backend `{other}`"))),
    }
}

pub fn embed_image(image: &ImageTensor, backend: &dyn EmbeddingBackend) -> Result<EmbeddingVector> {
    if !image.in_unit_range() {
        let (h, w, c) = image.shape();
        return Err(Error::UnsupportedImageShape {
            height: h,
            width: w,
            channels: c,
            reason: "values outside [0, 1]".into(),
        });
    }
    backend.embed_image(image)
}

pub fn embed_text(text: &str, backend: &dyn EmbeddingBackend) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    backend.embed_text(text)
}
