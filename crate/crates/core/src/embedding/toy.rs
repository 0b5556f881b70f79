//! Deterministic, dependency-free embedder used in tests and desk-scale runs.
//!
//! Images: 4×4 per-channel mean pools (centered at 0.5) followed by an 8-bin
//! histogram of forward-difference gradient magnitudes on the channel-mean
//! image, projected to 64 dims by a hash-seeded dense matrix.
//! Text: signed character-trigram counts hashed into 64 buckets.
//! Both outputs are unit normalized.

use super::{EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const TOY_EMBED_DIM: usize = 64;
const MIN_SIDE: usize = 8;
const POOL: usize = 4;
const HIST_BINS: usize = 8;
const IMAGE_SALT: u64 = 0x5eed_1a6e_0000_0001;

#[derive(Debug, Clone, Default)]
pub struct ToyEmbedder;

impl ToyEmbedder {
    pub fn new() -> Self {
        Self
    }

    /// The pre-projection feature vector of an image.
    pub fn image_features(image: &ImageTensor) -> Vec<f64> {
        let (h, w, ch) = image.shape();
        let mut features = Vec::with_capacity(POOL * POOL * ch + HIST_BINS);
        for gy in 0..POOL {
            let (y0, y1) = (gy * h / POOL, (gy + 1) * h / POOL);
            for gx in 0..POOL {
                let (x0, x1) = (gx * w / POOL, (gx + 1) * w / POOL);
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                for c in 0..ch {
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += image.get(y, x, c);
                        }
                    }
                    features.push(sum / count - 0.5);
                }
            }
        }

        let gray = |y: usize, x: usize| -> f64 {
            (0..ch).map(|c| image.get(y, x, c)).sum::<f64>() / ch as f64
        };
        let mut hist = [0u64; HIST_BINS];
        let max_mag = std::f64::consts::SQRT_2;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let g = gray(y, x);
                let gx = gray(y, x + 1) - g;
                let gy = gray(y + 1, x) - g;
                let mag = (gx * gx + gy * gy).sqrt();
                let bin = ((mag / max_mag * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                hist[bin] += 1;
            }
        }
        let total = ((h - 1) * (w - 1)) as f64;
        features.extend(hist.iter().map(|&n| n as f64 / total));
        features
    }
}

/// SplitMix64 finalizer; the only mixing function the toy recipe uses.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn projection_weight(feature: usize, out: usize) -> f64 {
    let h = splitmix64(IMAGE_SALT ^ ((feature as u64) << 32) ^ out as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingBackend for ToyEmbedder {
    fn identifier(&self) -> &str {
        "toy"
    }

    fn embed_dim(&self) -> usize {
        TOY_EMBED_DIM
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<EmbeddingVector> {
        let (h, w, c) = image.shape();
        if h < MIN_SIDE || w < MIN_SIDE || c == 0 {
            return Err(Error::UnsupportedImageShape {
                height: h,
                width: w,
                channels: c,
                reason: format!("toy backend needs at least {MIN_SIDE}x{MIN_SIDE}"),
            });
        }
        let features = Self::image_features(image);
        let mut out = vec![0.0; TOY_EMBED_DIM];
        for (i, f) in features.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += f * projection_weight(i, j);
            }
        }
        EmbeddingVector::unit(out)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::EmptyText);
        }
        let padded: Vec<char> = format!(" {} ", trimmed.to_lowercase()).chars().collect();
        let mut out = vec![0.0; TOY_EMBED_DIM];
        let mut buf = String::new();
        for tri in padded.windows(3) {
            buf.clear();
            buf.extend(tri);
            let h = fnv1a(buf.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            out[(h % TOY_EMBED_DIM as u64) as usize] += sign;
        }
        EmbeddingVector::unit(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine_similarity;

    #[test]
    fn zero_image_is_deterministic_unit_vector() {
        let toy = ToyEmbedder::new();
        let img = ImageTensor::zeros(32, 32, 3);
        let a = toy.embed_image(&img).unwrap();
        let b = toy.embed_image(&img).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a.dim(), TOY_EMBED_DIM);
    }

    #[test]
    fn text_is_case_insensitive_and_distinct() {
        let toy = ToyEmbedder::new();
        let a = toy.embed_text("a hazelnut with cobnut").unwrap();
        assert_eq!(a, toy.embed_text("A Hazelnut with COBNUT").unwrap());
        let x = toy.embed_text("a").unwrap();
        let y = toy.embed_text("b").unwrap();
        assert!(cosine_similarity(&x, &y).unwrap() < 1.0);
    }

    #[test]
    fn tiny_image_rejected() {
        let toy = ToyEmbedder::new();
        assert!(matches!(
            toy.embed_image(&ImageTensor::zeros(4, 16, 3)),
            Err(Error::UnsupportedImageShape { .. })
        ));
    }
}
