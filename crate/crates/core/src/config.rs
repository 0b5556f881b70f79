//! Flat `section.key = value` run configuration with a canonical digest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ScenarioKind, Strategy};
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::prompt::{Comparator, Fallback, PromptOptions, SelectionMode};
use crate::vq::{GeneratorConfig, SamplingMode, VarianceSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEmbedding {
    /// First selected original only.
    Single,
    /// Normalized mean over all selected originals.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub t_max: usize,
    pub threshold: f64,
    pub comparator: Comparator,
    pub fallback: Fallback,
    pub image_embedding: ImageEmbedding,
    /// 0 scans exhaustively; otherwise the batched scan length.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSection {
    pub backbone: String,
    pub coreset_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    /// Dataset root holding `<category>/train/good` etc. Empty means the
    /// pipeline renders a synthetic category first.
    pub root: String,
    pub category: String,
    pub scenario: ScenarioKind,
    pub synthetic_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub embedding_backend: String,
    pub prompt: PromptSection,
    pub generator: GeneratorConfig,
    /// Reconstruction-only steps before the first round.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub integrator: IntegratorConfig,
    pub detector: DetectorSection,
    pub data: DataSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            embedding_backend: "toy".into(),
            prompt: PromptSection {
                t_max: 1000,
                threshold: 0.5,
                comparator: Comparator::Greater,
                fallback: Fallback::Naive,
                image_embedding: ImageEmbedding::Mean,
                iterations: 0,
            },
            generator: GeneratorConfig::default(),
            pretrain_steps: 300,
            pretrain_lr: 0.01,
            integrator: IntegratorConfig::default(),
            detector: DetectorSection {
                backbone: "toy".into(),
                coreset_fraction: 0.1,
            },
            data: DataSection {
                root: String::new(),
                category: "hazelnut".into(),
                scenario: ScenarioKind::OneShot,
                synthetic_seed: 0,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

fn fmt_f64(v: f64) -> String {
    // Debug keeps a decimal point, so floats and integers stay distinguishable.
    format!("{v:?}")
}

fn variance_source_str(v: VarianceSource) -> &'static str {
    match v {
        VarianceSource::Quantized => "quantized",
        VarianceSource::Continuous => "continuous",
    }
}

fn image_embedding_str(v: ImageEmbedding) -> &'static str {
    match v {
        ImageEmbedding::Single => "single",
        ImageEmbedding::Mean => "mean",
    }
}

fn comparator_str(v: Comparator) -> &'static str {
    match v {
        Comparator::Greater => "greater",
        Comparator::Less => "less",
    }
}

fn fallback_str(v: Fallback) -> &'static str {
    match v {
        Fallback::Error => "error",
        Fallback::Naive => "naive",
    }
}

fn strategy_str(v: Strategy) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl PipelineConfig {
    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.generator;
        let hidden: Vec<String> = g.hidden.iter().map(|h| h.to_string()).collect();
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("embedding.backend", self.embedding_backend.clone()),
            ("prompt.t_max", self.prompt.t_max.to_string()),
            ("prompt.threshold", fmt_f64(self.prompt.threshold)),
            ("prompt.comparator", comparator_str(self.prompt.comparator).into()),
            ("prompt.fallback", fallback_str(self.prompt.fallback).into()),
            ("prompt.image_embedding", image_embedding_str(self.prompt.image_embedding).into()),
            ("prompt.iterations", self.prompt.iterations.to_string()),
            ("generator.K", g.codebook_size.to_string()),
            ("generator.latent_dim", g.latent_dim.to_string()),
            ("generator.grid", g.grid.to_string()),
            ("generator.resolution", g.resolution.to_string()),
            ("generator.hidden", hidden.join(",")),
            ("generator.lambda", fmt_f64(g.lambda)),
            ("generator.beta", fmt_f64(g.beta)),
            ("generator.lr", fmt_f64(g.learning_rate)),
            ("generator.sampling_mode", g.sampling_mode.as_str().into()),
            ("generator.pretrain_steps", self.pretrain_steps.to_string()),
            ("generator.pretrain_lr", fmt_f64(self.pretrain_lr)),
            ("variance.source", variance_source_str(g.variance_source).into()),
            ("variance.scalar_per_patch", g.variance_scalar_per_patch.to_string()),
            ("integrator.rounds", self.integrator.rounds.to_string()),
            ("integrator.copies", self.integrator.copies.to_string()),
            ("integrator.augment", self.integrator.augment.to_string()),
            ("integrator.steps_per_round", self.integrator.steps_per_round.to_string()),
            ("integrator.strategy", strategy_str(self.integrator.strategy)),
            ("integrator.memory_lean", self.integrator.memory_lean.to_string()),
            ("detector.backbone", self.detector.backbone.clone()),
            ("detector.coreset_fraction", fmt_f64(self.detector.coreset_fraction)),
            ("data.root", self.data.root.clone()),
            ("data.category", self.data.category.clone()),
            ("data.scenario", self.data.scenario.as_str().into()),
            ("data.synthetic_seed", self.data.synthetic_seed.to_string()),
        ];
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.generator;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "embedding.backend" => self.embedding_backend = v.to_string(),
            "prompt.t_max" => self.prompt.t_max = parse(key, v)?,
            "prompt.threshold" => self.prompt.threshold = parse(key, v)?,
            "prompt.comparator" => self.prompt.comparator = v.parse()?,
            "prompt.fallback" => self.prompt.fallback = v.parse()?,
            "prompt.image_embedding" => {
                self.prompt.image_embedding = match v {
                    "single" => ImageEmbedding::Single,
                    "mean" => ImageEmbedding::Mean,
                    _ => return Err(Error::Config(format!("invalid value `{v}` for `{key}`"))),
                }
            }
            "prompt.iterations" => self.prompt.iterations = parse(key, v)?,
            "generator.K" => g.codebook_size = parse(key, v)?,
            "generator.latent_dim" => g.latent_dim = parse(key, v)?,
            "generator.grid" => g.grid = parse(key, v)?,
            "generator.resolution" => g.resolution = parse(key, v)?,
            "generator.hidden" => {
                g.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|h| parse(key, h.trim())).collect::<Result<_>>()?
                }
            }
            "generator.lambda" => g.lambda = parse(key, v)?,
            "generator.beta" => g.beta = parse(key, v)?,
            "generator.lr" => g.learning_rate = parse(key, v)?,
            "generator.sampling_mode" => g.sampling_mode = v.parse::<SamplingMode>()?,
            "generator.pretrain_steps" => self.pretrain_steps = parse(key, v)?,
            "generator.pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "variance.source" => {
                g.variance_source = match v {
                    "quantized" => VarianceSource::Quantized,
                    "continuous" => VarianceSource::Continuous,
                    _ => return Err(Error::Config(format!("invalid value `{v}` for `{key}`"))),
                }
            }
            "variance.scalar_per_patch" => g.variance_scalar_per_patch = parse_bool(key, v)?,
            "integrator.rounds" => self.integrator.rounds = parse(key, v)?,
            "integrator.copies" => self.integrator.copies = parse(key, v)?,
            "integrator.augment" => self.integrator.augment = parse(key, v)?,
            "integrator.steps_per_round" => self.integrator.steps_per_round = parse(key, v)?,
            "integrator.strategy" => self.integrator.strategy = v.parse()?,
            "integrator.memory_lean" => self.integrator.memory_lean = parse_bool(key, v)?,
            "detector.backbone" => self.detector.backbone = v.to_string(),
            "detector.coreset_fraction" => self.detector.coreset_fraction = parse(key, v)?,
            "data.root" => self.data.root = v.to_string(),
            "data.category" => self.data.category = v.to_string(),
            "data.scenario" => self.data.scenario = v.parse()?,
            "data.synthetic_seed" => self.data.synthetic_seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Canonical form: one `key = value` line per key, sorted.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.integrator.validate()?;
        if !(self.detector.coreset_fraction > 0.0 && self.detector.coreset_fraction <= 1.0) {
            return Err(Error::Config("detector.coreset_fraction must be in (0, 1]".into()));
        }
        if self.pretrain_lr.is_nan() || self.pretrain_lr < 0.0 {
            return Err(Error::Config("generator.pretrain_lr must be >= 0".into()));
        }
        if !(self.prompt.threshold.is_finite()) || self.prompt.t_max == 0 {
            return Err(Error::Config("prompt.threshold must be finite and prompt.t_max >= 1".into()));
        }
        if self.data.category.trim().is_empty() {
            return Err(Error::Config("data.category must be set".into()));
        }
        Ok(())
    }

    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            t_max: self.prompt.t_max,
            threshold: self.prompt.threshold,
            comparator: self.prompt.comparator,
            fallback: self.prompt.fallback,
            mode: match self.prompt.iterations {
                0 => SelectionMode::Exhaustive,
                iterations => SelectionMode::Batched { iterations },
            },
        }
    }

    pub fn data_root(&self) -> Option<PathBuf> {
        (!self.data.root.is_empty()).then(|| PathBuf::from(&self.data.root))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrips() {
        let mut c = PipelineConfig::default();
        c.set("generator.lr", "0.01").unwrap();
        c.set("integrator.strategy", "random-pick").unwrap();
        c.set("generator.hidden", "8, 16").unwrap();
        let back = PipelineConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        assert_ne!(c.digest(), PipelineConfig::default().digest());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(PipelineConfig::parse_text("generator.k = 3"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse_text("seed = -1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse_text("seed 3"), Err(Error::Config(_))));
    }

    #[test]
    fn comments_and_order_do_not_change_digest() {
        let a = PipelineConfig::parse_text("seed = 4\n# note\ngenerator.K = 32\n").unwrap();
        let b = PipelineConfig::parse_text("generator.K=32   # inline\nseed=4").unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
        let (k, _) = PipelineConfig::default().entries()[0];
        assert_eq!(k, "data.category");
    }
}
