//! Text-guided variational generation of non-defective images, and the
//! memory-bank anomaly detector used to evaluate them.

pub mod config;
pub mod data;
pub mod detector;
pub mod embedding;
pub mod error;
pub mod image;
pub mod integrator;
pub mod lexicon;
pub mod pipeline;
pub mod prompt;
pub mod quality;
pub mod report;
pub mod vq;

pub use embedding::{cosine_similarity, l2_distance, EmbeddingBackend, EmbeddingVector};
pub use error::{Error, Result};
pub use image::ImageTensor;
