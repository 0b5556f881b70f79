//! Round loop: train the generator, generate a set, score it against the
//! prompt, keep the best round.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::augment::{augment, Strategy};
use crate::data::io::write_image;
use crate::embedding::toy::splitmix64;
use crate::embedding::{cosine_similarity, embed_image, embed_text, EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::prompt::PromptSelection;
use crate::vq::Generator;

/// Mean of unit-normalized image embeddings, re-normalized.
pub fn visual_feature(images: &[ImageTensor], backend: &dyn EmbeddingBackend) -> Result<EmbeddingVector> {
    if images.is_empty() {
        return Err(Error::EmptyImageSet);
    }
    let embeddings: Vec<EmbeddingVector> = images
        .par_iter()
        .map(|img| embed_image(img, backend))
        .collect::<Result<_>>()?;
    EmbeddingVector::mean_of(&embeddings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundScore {
    pub score: f64,
    pub visual_feature: Option<EmbeddingVector>,
}

/// Scores one round's generated set; higher is better.
pub trait SetScorer: Sync {
    fn score(&self, round_index: usize, images: &[ImageTensor]) -> Result<RoundScore>;
}

/// Cosine between the prompt embedding and the set's visual feature.
pub struct EmbeddingScorer<'a> {
    backend: &'a dyn EmbeddingBackend,
    text: EmbeddingVector,
}

impl<'a> EmbeddingScorer<'a> {
    /// The prompt is embedded once and fixed for the whole run.
    pub fn new(prompt: &str, backend: &'a dyn EmbeddingBackend) -> Result<Self> {
        Ok(Self {
            backend,
            text: embed_text(prompt, backend)?,
        })
    }

    pub fn text_embedding(&self) -> &EmbeddingVector {
        &self.text
    }
}

impl SetScorer for EmbeddingScorer<'_> {
    fn score(&self, _round_index: usize, images: &[ImageTensor]) -> Result<RoundScore> {
        let feature = visual_feature(images, self.backend)?;
        Ok(RoundScore {
            score: cosine_similarity(&self.text, &feature)?,
            visual_feature: Some(feature),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rounds: usize,
    pub copies: usize,
    pub augment: usize,
    pub steps_per_round: usize,
    pub strategy: Strategy,
    /// Keep only the best image set in memory; scores are kept for all rounds.
    pub memory_lean: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            copies: 30,
            augment: 8,
            steps_per_round: 1,
            strategy: Strategy::Strategies1,
            memory_lean: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("integrator.rounds must be >= 1".into()));
        }
        if self.copies < 1 || self.augment < 1 {
            return Err(Error::Config("integrator.copies and integrator.augment must be >= 1".into()));
        }
        if self.steps_per_round < 1 {
            return Err(Error::Config("integrator.steps_per_round must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRound {
    /// 1-based.
    pub round_index: usize,
    /// Empty for non-best rounds in memory-lean mode.
    pub images: Vec<ImageTensor>,
    pub visual_feature: Option<EmbeddingVector>,
    pub score: f64,
    pub generator_loss: f64,
    pub seed_used: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub rounds: Vec<GenerationRound>,
    /// 1-based index of the winning round.
    pub alpha: usize,
    pub best_images: Vec<ImageTensor>,
    pub prompt: PromptSelection,
    pub config: IntegratorConfig,
    pub run_seed: u64,
}

impl RunResult {
    pub fn best_round(&self) -> &GenerationRound {
        &self.rounds[self.alpha - 1]
    }
}

/// Seed of round `l` (1-based) derived from the run seed.
pub fn round_seed(run_seed: u64, round_index: usize) -> u64 {
    splitmix64(splitmix64(run_seed) ^ round_index as u64)
}

/// Earliest index (1-based) attaining the maximal score.
pub fn earliest_argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Runs all rounds. `observer` sees each finished round, so a caller can keep
/// a partial manifest if a later round fails.
pub fn run(
    originals: &[ImageTensor],
    prompt: &PromptSelection,
    config: &IntegratorConfig,
    generator: &mut Generator,
    scorer: &dyn SetScorer,
    run_seed: u64,
    observer: &mut dyn FnMut(&GenerationRound),
) -> Result<RunResult> {
    config.validate()?;
    if originals.is_empty() {
        return Err(Error::EmptyImageSet);
    }
    let mode = generator.config().sampling_mode;
    let mut rounds: Vec<GenerationRound> = Vec::with_capacity(config.rounds);
    let mut best: Option<(usize, f64, Vec<ImageTensor>)> = None;
    for l in 1..=config.rounds {
        let seed = round_seed(run_seed, l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views = augment(originals, config.strategy, config.augment, &mut rng)?.images;
        let mut loss = f64::NAN;
        for _ in 0..config.steps_per_round {
            loss = generator.train_step(originals, &views, config.copies, &mut rng)?.total;
        }
        let (mean, variance) = generator.latent_statistics(&views)?;
        let images = generator.generate_set(&mean, &variance, config.copies, mode, &mut rng)?;
        let scored = scorer.score(l, &images)?;
        if !scored.score.is_finite() {
            return Err(Error::Config(format!("round {l} produced a non-finite score")));
        }
        let improved = best.as_ref().is_none_or(|(_, s, _)| scored.score > *s);
        let round = GenerationRound {
            round_index: l,
            images: if config.memory_lean { Vec::new() } else { images.clone() },
            visual_feature: scored.visual_feature,
            score: scored.score,
            generator_loss: loss,
            seed_used: seed,
        };
        observer(&round);
        if improved {
            if config.memory_lean {
                if let Some((prev, _, _)) = best {
                    rounds[prev - 1].images.clear();
                }
            }
            best = Some((l, scored.score, images));
        }
        rounds.push(round);
    }
    let (alpha, _, best_images) = best.expect("at least one round");
    if config.memory_lean {
        rounds[alpha - 1].images = best_images.clone();
    }
    Ok(RunResult {
        rounds,
        alpha,
        best_images,
        prompt: prompt.clone(),
        config: config.clone(),
        run_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub loss: f64,
    pub score: f64,
    pub seed: u64,
}

impl From<&GenerationRound> for RoundRecord {
    fn from(r: &GenerationRound) -> Self {
        Self {
            round: r.round_index,
            loss: r.generator_loss,
            score: r.score,
            seed: r.seed_used,
        }
    }
}

/// Everything needed to rerun a generation and check its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub prompt: String,
    pub prompt_fallback: bool,
    pub rounds: Vec<RoundRecord>,
    /// `None` until the run completes.
    pub alpha: Option<usize>,
    pub run_seed: u64,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub originals: Vec<PathBuf>,
    pub best_images: Vec<String>,
}

impl RunManifest {
    pub fn new(run_id: &str, prompt: &PromptSelection, run_seed: u64, config_digest: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            prompt: prompt.prompt.clone(),
            prompt_fallback: prompt.fallback,
            rounds: Vec::new(),
            alpha: None,
            run_seed,
            config_digest: config_digest.to_string(),
            config: serde_json::Value::Null,
            originals: Vec::new(),
            best_images: Vec::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BEST_DIR: &str = "best";

/// Writes `best/NNN.png` and a completed `manifest.json` into `out_dir`.
pub fn export_best_set(result: &RunResult, mut manifest: RunManifest, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let best_dir = out_dir.join(BEST_DIR);
    std::fs::create_dir_all(&best_dir)?;
    manifest.best_images.clear();
    for (i, img) in result.best_images.iter().enumerate() {
        let name = format!("{BEST_DIR}/{i:03}.png");
        write_image(out_dir.join(&name), img)?;
        manifest.best_images.push(name);
    }
    manifest.rounds = result.rounds.iter().map(RoundRecord::from).collect();
    manifest.alpha = Some(result.alpha);
    let path = out_dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}
