use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use varigen_core::config::PipelineConfig;
use varigen_core::data::{image_files, load_images, make_synthetic_category, SyntheticSpec};
use varigen_core::detector::{backbone_from_id, EvalReport};
use varigen_core::embedding::{backend_from_id, CachedEmbedder, EmbeddingCache};
use varigen_core::pipeline::{self, write_json, EVAL_AUGMENTED_FILE, EVAL_BASELINE_FILE};
use varigen_core::prompt::PromptSelection;
use varigen_core::quality::QualityRow;
use varigen_core::report;
use varigen_core::vq::checkpoint;
use varigen_core::{EmbeddingBackend, Error, Result};

/// Environment variable naming the directory of the persistent embedding cache.
const CACHE_ENV: &str = "VARIGEN_CACHE_DIR";
const CACHE_FILE: &str = "embeddings.bin";

#[derive(Parser)]
#[command(name = "varigen", version, about = "Generate non-defective image variations and evaluate them for anomaly detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Global seed (`seed` key).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate the configuration and exit without running anything.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Select a status prompt for an object from its images.
    Prompt {
        #[arg(long)]
        object: String,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        comparator: Option<String>,
        /// `error` or `naive`; this command defaults to `error`.
        #[arg(long, default_value = "error")]
        fallback: String,
        /// Also write the selection as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Warm up a generator on augmented views and save a checkpoint.
    Train {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reconstruction steps (`generator.pretrain_steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the integrator rounds and export the best image set.
    Generate {
        #[arg(long)]
        object: String,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        copies: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Start from a saved generator instead of warming up a fresh one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a dataset's test split with a bank built from the chosen originals,
    /// optionally plus generated images.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        scenario: Option<String>,
        /// Directory of generated PNGs to add to the bank.
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompt, generation and both detector evaluations in one run directory.
    Pipeline {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        scenario: Option<String>,
        /// Run directory; defaults to `runs/<run_id>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write CSV reports for a run, or a delta table for two runs.
    Report {
        #[arg(required = true, num_args = 1..=2)]
        runs: Vec<PathBuf>,
        /// Comparison output for two runs; defaults to `comparison.csv` in the
        /// second run's report directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the quality table as aligned text.
        #[arg(long)]
        quality: bool,
    },
    /// Render a synthetic category in the dataset layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML spec; defaults to the built-in one.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        category: Option<String>,
    },
}

fn load_config(global: &Global, extra: &[(&str, Option<String>)]) -> Result<PipelineConfig> {
    let mut config = match &global.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for entry in &global.overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{entry}`")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    for (key, value) in extra {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn open_cache() -> Result<Option<EmbeddingCache>> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => {
            let dir = PathBuf::from(dir);
            std::fs::create_dir_all(&dir)?;
            Ok(Some(EmbeddingCache::open(dir.join(CACHE_FILE))?))
        }
        _ => Ok(None),
    }
}

fn with_backend<T>(config: &PipelineConfig, f: impl FnOnce(&dyn EmbeddingBackend) -> Result<T>) -> Result<T> {
    let backend = backend_from_id(&config.embedding_backend)?;
    match open_cache()? {
        Some(cache) => f(&CachedEmbedder::new(&*backend, &cache)),
        None => f(&*backend),
    }
}

fn load_dir(dir: &Path, resolution: usize) -> Result<(Vec<PathBuf>, Vec<varigen_core::ImageTensor>)> {
    let files = image_files(dir)?;
    let images = load_images(&files, resolution)?;
    let names = files
        .iter()
        .map(|p| PathBuf::from(pipeline::relative(p, dir)))
        .collect();
    Ok((names, images))
}

fn print_prompt(selection: &PromptSelection) {
    if selection.fallback {
        println!("prompt: {} (naive fallback)", selection.prompt);
    } else {
        println!("prompt: {}", selection.prompt);
    }
    println!(
        "positive set: {} of {} candidates",
        selection.positive_set.len(),
        selection.candidates.len()
    );
    if let (Some(b), Some(c)) = (&selection.best, selection.best_candidate()) {
        println!("best:  {} ({:.6})", c.text, b.score);
    }
    if let (Some(w), Some(c)) = (&selection.worst, selection.worst_candidate()) {
        println!("worst: {} ({:.6})", c.text, w.score);
    }
}

fn print_eval(label: &str, r: &EvalReport) {
    println!(
        "{label:9} detection {:.4} segmentation {:.4} bank {} ({} generated)",
        r.detection_auroc, r.segmentation_auroc, r.bank_size, r.bank_generated
    );
}

fn print_quality(rows: &[QualityRow]) {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
    println!("{:width$}  {:>8}  {:>9}", "set", "ssim", "psnr_db");
    for r in rows {
        let psnr = r.psnr_db.map(|p| format!("{p:.3}")).unwrap_or_else(|| "inf".into());
        println!("{:width$}  {:>8.4}  {:>9}", r.label, r.ssim, psnr);
    }
}

fn dry_run(config: &PipelineConfig) {
    print!("{}", config.to_text());
    println!("# digest {}", config.digest());
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Prompt {
            object,
            images,
            t_max,
            threshold,
            comparator,
            fallback,
            out,
        } => {
            let config = load_config(
                g,
                &[
                    ("data.category", Some(object)),
                    ("prompt.t_max", t_max.map(|v| v.to_string())),
                    ("prompt.threshold", threshold.map(|v| v.to_string())),
                    ("prompt.comparator", comparator),
                    ("prompt.fallback", Some(fallback)),
                ],
            )?;
            if g.dry_run {
                dry_run(&config);
                return Ok(());
            }
            let (_, originals) = load_dir(&images, config.generator.resolution)?;
            let selection = with_backend(&config, |b| pipeline::select_prompt(&config, &originals, b))?;
            print_prompt(&selection);
            if let Some(out) = out {
                write_json(&out, &selection)?;
            }
        }
        Command::Train { images, out, steps } => {
            let config = load_config(g, &[("generator.pretrain_steps", steps.map(|v| v.to_string()))])?;
            if g.dry_run {
                dry_run(&config);
                return Ok(());
            }
            let (_, originals) = load_dir(&images, config.generator.resolution)?;
            let generator = pipeline::warm_generator(&config, &originals)?;
            let loss = generator.vq_objective(&originals)?;
            checkpoint::save(&generator, &out)?;
            println!("reconstruction {:.6} vq {:.6}", loss.reconstruction, loss.vq);
            println!("checkpoint {}", out.display());
        }
        Command::Generate {
            object,
            images,
            rounds,
            copies,
            out,
            checkpoint: from,
        } => {
            let config = load_config(
                g,
                &[
                    ("data.category", Some(object)),
                    ("integrator.rounds", rounds.map(|v| v.to_string())),
                    ("integrator.copies", copies.map(|v| v.to_string())),
                ],
            )?;
            if g.dry_run {
                dry_run(&config);
                return Ok(());
            }
            let (names, originals) = load_dir(&images, config.generator.resolution)?;
            let (result, manifest) = with_backend(&config, |b| {
                let prompt = pipeline::select_prompt(&config, &originals, b)?;
                let mut generator = match &from {
                    Some(path) => checkpoint::load(path)?,
                    None => pipeline::warm_generator(&config, &originals)?,
                };
                pipeline::run_generation(&config, &originals, names, &prompt, &mut generator, b, &out)
            })?;
            println!("prompt: {}", result.prompt.prompt);
            for r in &manifest.rounds {
                println!("round {:3} loss {:.6} score {:.6}", r.round, r.loss, r.score);
            }
            println!("alpha {} -> {}", result.alpha, out.join(varigen_core::integrator::BEST_DIR).display());
        }
        Command::Evaluate {
            data,
            category,
            scenario,
            generated,
            out,
        } => {
            let config = load_config(
                g,
                &[
                    ("data.root", data.map(|p| p.to_string_lossy().into_owned())),
                    ("data.category", category),
                    ("data.scenario", scenario),
                ],
            )?;
            if g.dry_run {
                dry_run(&config);
                return Ok(());
            }
            let resolution = config.generator.resolution;
            let backbone = backbone_from_id(&config.detector.backbone)?;
            let index = pipeline::prepare_dataset(&config, &out)?;
            let selection = pipeline::choose_originals(&config, &index)?;
            let originals = load_images(&selection.paths, resolution)?;
            let test = pipeline::load_test_set(&index, resolution)?;
            match generated {
                Some(dir) => {
                    let (_, images) = load_dir(&dir, resolution)?;
                    let (baseline, augmented) =
                        pipeline::evaluate_pair(&config, &originals, &images, &test, &*backbone)?;
                    write_json(&out.join(EVAL_BASELINE_FILE), &baseline)?;
                    write_json(&out.join(EVAL_AUGMENTED_FILE), &augmented)?;
                    print_eval("baseline", &baseline);
                    print_eval("augmented", &augmented);
                }
                None => {
                    let baseline = pipeline::evaluate_bank(&config, &originals, &[], &test, &*backbone)?;
                    write_json(&out.join(EVAL_BASELINE_FILE), &baseline)?;
                    print_eval("baseline", &baseline);
                }
            }
        }
        Command::Pipeline {
            data,
            category,
            scenario,
            out,
        } => {
            let config = load_config(
                g,
                &[
                    ("data.root", data.map(|p| p.to_string_lossy().into_owned())),
                    ("data.category", category),
                    ("data.scenario", scenario),
                ],
            )?;
            if g.dry_run {
                dry_run(&config);
                return Ok(());
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(pipeline::run_id(&config)));
            let backbone = backbone_from_id(&config.detector.backbone)?;
            let outcome = with_backend(&config, |b| pipeline::run_pipeline(&config, &out, b, &*backbone))?;
            println!("prompt: {}", outcome.prompt.prompt);
            println!("alpha {} of {}", outcome.result.alpha, outcome.result.rounds.len());
            print_eval("baseline", &outcome.baseline);
            print_eval("augmented", &outcome.augmented);
            println!(
                "delta     detection {:+.4} segmentation {:+.4}",
                outcome.augmented.detection_auroc - outcome.baseline.detection_auroc,
                outcome.augmented.segmentation_auroc - outcome.baseline.segmentation_auroc
            );
            println!("run {}", out.display());
        }
        Command::Report { runs, out, quality } => {
            if g.dry_run {
                return Ok(());
            }
            if let [a, b] = runs.as_slice() {
                let out = out.unwrap_or_else(|| b.join(report::REPORT_DIR).join("comparison.csv"));
                report::write_comparison(a, b, &out)?;
                print!("{}", std::fs::read_to_string(&out)?);
            } else {
                let run = &runs[0];
                for path in report::write_reports(run)? {
                    println!("{}", path.display());
                }
                if quality {
                    print_quality(&report::load_run(run)?.quality.rows);
                }
            }
        }
        Command::Synth { out, spec, category } => {
            let mut synth = match &spec {
                Some(path) => SyntheticSpec::from_toml(&std::fs::read_to_string(path)?)?,
                None => SyntheticSpec::default(),
            };
            if let Some(c) = category {
                synth.category = c;
            }
            if let Some(seed) = g.seed {
                synth.seed = seed;
            }
            synth.validate()?;
            if g.dry_run {
                print!("{}", synth.to_toml());
                return Ok(());
            }
            let root = make_synthetic_category(&synth, &out)?;
            println!("{}", root.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_precondition() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
