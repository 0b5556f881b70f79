//! End-to-end run: data, prompt, generator warm-up, integrator rounds, and
//! the detector evaluated with and without the generated images.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ImageEmbedding, PipelineConfig};
use crate::data::io::quantize_8bit;
use crate::data::synth::SyntheticSpec;
use crate::data::{
    augment, load_dataset, load_images, load_mask, make_synthetic_category, select_scenario,
    DatasetIndex, ScenarioSelection,
};
use crate::detector::{build_bank, evaluate, EvalReport, LabeledImage, PatchBackbone};
use crate::embedding::{embed_image, EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::integrator::{self, EmbeddingScorer, RoundRecord, RunManifest, RunResult, MANIFEST_FILE};
use crate::lexicon::SnapshotLexicon;
use crate::prompt::{generate_prompt, PromptSelection};
use crate::quality::{quality_table, QualityRow};
use crate::vq::Generator;

pub const CONFIG_FILE: &str = "config.txt";
pub const PROMPT_FILE: &str = "prompt.json";
pub const QUALITY_FILE: &str = "quality.json";
pub const EVAL_BASELINE_FILE: &str = "eval_baseline.json";
pub const EVAL_AUGMENTED_FILE: &str = "eval_augmented.json";

/// Independent seed for a named pipeline stage.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Loads `data.root`, or renders the synthetic category under `work_dir/data`.
pub fn prepare_dataset(config: &PipelineConfig, work_dir: &Path) -> Result<DatasetIndex> {
    match config.data_root() {
        Some(root) => load_dataset(root, &config.data.category),
        None => {
            let spec = SyntheticSpec {
                category: config.data.category.clone(),
                resolution: config.generator.resolution,
                seed: config.data.synthetic_seed,
                ..SyntheticSpec::default()
            };
            let data_dir = work_dir.join("data");
            make_synthetic_category(&spec, &data_dir)?;
            load_dataset(&data_dir, &config.data.category)
        }
    }
}

pub fn choose_originals(config: &PipelineConfig, index: &DatasetIndex) -> Result<ScenarioSelection> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "scenario"));
    select_scenario(index, config.data.scenario, &mut rng)
}

/// Embedding of the originals used as the prompt's image side.
pub fn image_embedding(
    config: &PipelineConfig,
    originals: &[ImageTensor],
    backend: &dyn EmbeddingBackend,
) -> Result<EmbeddingVector> {
    let first = originals.first().ok_or(Error::EmptyImageSet)?;
    match config.prompt.image_embedding {
        ImageEmbedding::Single => embed_image(first, backend)?.normalize(),
        ImageEmbedding::Mean => integrator::visual_feature(originals, backend),
    }
}

pub fn select_prompt(
    config: &PipelineConfig,
    originals: &[ImageTensor],
    backend: &dyn EmbeddingBackend,
) -> Result<PromptSelection> {
    let image = image_embedding(config, originals, backend)?;
    generate_prompt(
        &config.data.category,
        &SnapshotLexicon::bundled(),
        &image,
        backend,
        &config.prompt_options(),
    )
}

/// Fresh generator with a data-seeded codebook and `pretrain_steps`
/// reconstruction-only updates on augmented views.
pub fn warm_generator(config: &PipelineConfig, originals: &[ImageTensor]) -> Result<Generator> {
    let mut gen_config = config.generator.clone();
    gen_config.seed = stage_seed(config.seed, "generator");
    let mut generator = Generator::new(gen_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "warmup"));
    let n = config.integrator.augment;
    let views = augment(originals, config.integrator.strategy, n, &mut rng)?.images;
    generator.init_codebook_from(&views, &mut rng)?;
    let round_lr = generator.config().learning_rate;
    generator.config_mut().learning_rate = config.pretrain_lr;
    for _ in 0..config.pretrain_steps {
        let views = augment(originals, config.integrator.strategy, n, &mut rng)?.images;
        generator.pretrain_step(&views)?;
    }
    generator.config_mut().learning_rate = round_lr;
    Ok(generator)
}

pub fn load_test_set(index: &DatasetIndex, resolution: usize) -> Result<Vec<LabeledImage>> {
    index
        .test
        .iter()
        .map(|t| {
            let image = load_images(std::slice::from_ref(&t.path), resolution)?.remove(0);
            let mask = t.mask.as_deref().map(|m| load_mask(m, resolution)).transpose()?;
            Ok(LabeledImage {
                name: relative(&t.path, &index.root),
                image,
                label: t.label,
                mask,
            })
        })
        .collect()
}

/// Path relative to `root` with forward slashes, for stable manifests.
pub fn relative(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn run_id(config: &PipelineConfig) -> String {
    config.digest()[..12].to_string()
}

/// Detector report for a bank of `originals` plus `generated`. The coreset
/// seed depends only on the run seed, so banks with and without generated
/// images start from the same draw.
pub fn evaluate_bank(
    config: &PipelineConfig,
    originals: &[ImageTensor],
    generated: &[ImageTensor],
    test: &[LabeledImage],
    backbone: &dyn PatchBackbone,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "bank"));
    let bank = build_bank(originals, generated, config.detector.coreset_fraction, backbone, &mut rng)?;
    evaluate(&bank, backbone, test, config.data.scenario)
}

/// Detector reports for the bank without and with the generated images.
pub fn evaluate_pair(
    config: &PipelineConfig,
    originals: &[ImageTensor],
    generated: &[ImageTensor],
    test: &[LabeledImage],
    backbone: &dyn PatchBackbone,
) -> Result<(EvalReport, EvalReport)> {
    Ok((
        evaluate_bank(config, originals, &[], test, backbone)?,
        evaluate_bank(config, originals, generated, test, backbone)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub original: String,
    pub rows: Vec<QualityRow>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub prompt: PromptSelection,
    pub result: RunResult,
    pub manifest: RunManifest,
    pub baseline: EvalReport,
    pub augmented: EvalReport,
    pub quality: QualityReport,
}

/// Writes `config.txt`, `prompt.json` and the manifest, runs the integrator
/// and exports the best set. A failing round leaves the partial manifest
/// (completed rounds, no alpha) in place.
pub fn run_generation(
    config: &PipelineConfig,
    originals: &[ImageTensor],
    original_names: Vec<PathBuf>,
    prompt: &PromptSelection,
    generator: &mut Generator,
    backend: &dyn EmbeddingBackend,
    out_dir: &Path,
) -> Result<(RunResult, RunManifest)> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), config.to_text())?;
    write_json(&out_dir.join(PROMPT_FILE), prompt)?;

    let mut manifest = RunManifest::new(&run_id(config), prompt, config.seed, &config.digest());
    manifest.config = serde_json::Value::Object(
        config
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect(),
    );
    manifest.originals = original_names;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;

    let scorer = EmbeddingScorer::new(&prompt.prompt, backend)?;
    let mut partial = manifest.clone();
    let mut observe = |round: &integrator::GenerationRound| {
        partial.rounds.push(RoundRecord::from(round));
        // Best effort: the final export rewrites this file anyway.
        let _ = partial.write(&manifest_path);
    };
    let result = integrator::run(
        originals,
        prompt,
        &config.integrator,
        generator,
        &scorer,
        stage_seed(config.seed, "integrator"),
        &mut observe,
    )?;
    integrator::export_best_set(&result, manifest, out_dir)?;
    let manifest = RunManifest::read(&manifest_path)?;
    Ok((result, manifest))
}

/// Runs everything and writes the run directory; see [`run_generation`] for
/// what survives a failure.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
    backend: &dyn EmbeddingBackend,
    backbone: &dyn PatchBackbone,
) -> Result<PipelineOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let resolution = config.generator.resolution;

    let index = prepare_dataset(config, out_dir)?;
    let selection = choose_originals(config, &index)?;
    let originals = load_images(&selection.paths, resolution)?;
    let names = selection.paths.iter().map(|p| PathBuf::from(relative(p, &index.root))).collect();

    let prompt = select_prompt(config, &originals, backend)?;
    let mut generator = warm_generator(config, &originals)?;
    let (result, manifest) =
        run_generation(config, &originals, names, &prompt, &mut generator, backend, out_dir)?;

    // The detector sees exactly what was exported.
    let generated: Vec<ImageTensor> = result.best_images.iter().map(quantize_8bit).collect();
    let test = load_test_set(&index, resolution)?;
    let (baseline, augmented) = evaluate_pair(config, &originals, &generated, &test, backbone)?;
    write_json(&out_dir.join(EVAL_BASELINE_FILE), &baseline)?;
    write_json(&out_dir.join(EVAL_AUGMENTED_FILE), &augmented)?;

    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "quality"));
    let views = augment(&originals, config.integrator.strategy, config.integrator.copies, &mut rng)?.images;
    let rows = quality_table(
        &originals[0],
        &[("augmented".into(), views), ("generated".into(), generated)],
        &[],
    )?;
    let quality = QualityReport {
        original: manifest.originals[0].to_string_lossy().into_owned(),
        rows,
    };
    write_json(&out_dir.join(QUALITY_FILE), &quality)?;
    crate::report::write_reports(out_dir)?;

    Ok(PipelineOutcome {
        out_dir: out_dir.to_path_buf(),
        prompt,
        result,
        manifest,
        baseline,
        augmented,
        quality,
    })
}
