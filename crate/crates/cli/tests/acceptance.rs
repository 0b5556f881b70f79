//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 9 and 11 drive the `varigen` binary end to end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varigen_core::data::Strategy;
use varigen_core::detector::auroc;
use varigen_core::embedding::{EmbeddingVector, ToyEmbedder};
use varigen_core::image::ImageTensor;
use varigen_core::integrator::{self, EmbeddingScorer, IntegratorConfig, RoundScore, RunResult, SetScorer};
use varigen_core::prompt::{
    filter_outliers, select_best_prompt, Comparator, EmbeddedCandidate, Fallback, PromptCandidate,
    PromptSelection, SelectionMode,
};
use varigen_core::quality::{psnr, psnr_from_mse, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use varigen_core::vq::{
    estimate_statistics, quantize, sample_with_noise, Codebook, Generator, GeneratorConfig, LatentGrid,
    SamplingMode, VarianceGrid,
};

/// Seed on which the end-to-end trend is asserted strictly.
const REFERENCE_SEED: u64 = 1;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

// 1 --------------------------------------------------------------------------

fn quantization_oracle() -> Outcome {
    let t = Instant::now();
    let (k, dim) = (16, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    // a duplicated row forces exact ties
    let dup: Vec<f64> = rows[3 * dim..4 * dim].to_vec();
    rows[11 * dim..12 * dim].copy_from_slice(&dup);
    let codebook = Codebook::from_rows(k, dim, rows.clone()).map_err(|e| e.to_string())?;
    let mut latents: Vec<f64> = (0..200 * dim).map(|_| rng.random_range(-1.2..1.2)).collect();
    latents[..dim].copy_from_slice(&dup);
    let grid = LatentGrid::new(200, dim, latents.clone()).map_err(|e| e.to_string())?;
    let q = quantize(&grid, &codebook).map_err(|e| e.to_string())?;
    let got = q.indices().ok_or("no indices")?;
    for d in 0..200 {
        let z = &latents[d * dim..(d + 1) * dim];
        let mut best = (f64::INFINITY, 0);
        for j in 0..k {
            let dist: f64 = (0..dim).map(|c| (z[c] - rows[j * dim + c]).powi(2)).sum();
            if dist < best.0 {
                best = (dist, j);
            }
        }
        ensure(got[d] == best.1, || format!("latent {d}: {} vs oracle {}", got[d], best.1))?;
    }
    ensure(got[0] == 3, || format!("tie resolved to {}", got[0]))?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok("200 latents, K=16, ties to the smallest index".into())
}

// 2 --------------------------------------------------------------------------

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (positions, dim) = (9, 3);
    let grids: Vec<LatentGrid> = (0..10)
        .map(|_| {
            let v = (0..positions * dim).map(|_| rng.random_range(-3.0..3.0) + 10.0).collect();
            LatentGrid::new(positions, dim, v).unwrap()
        })
        .collect();
    let (mean, var) = estimate_statistics(&grids).map_err(|e| e.to_string())?;
    let n = grids.len() as f64;
    for i in 0..positions * dim {
        let m: f64 = grids.iter().map(|g| g.values()[i]).sum::<f64>() / n;
        let v: f64 = grids.iter().map(|g| (g.values()[i] - m).powi(2)).sum::<f64>() / n;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        ensure(rel(mean.values()[i], m) <= 1e-9, || format!("mean entry {i}"))?;
        ensure(rel(var.values()[i], v) <= 1e-9, || format!("variance entry {i}"))?;
    }
    let (_, single) = estimate_statistics(&grids[..1]).map_err(|e| e.to_string())?;
    ensure(single.values().iter().all(|&v| v == 0.0), || "N=1 variance is not zero".into())?;
    Ok("10 grids within 1e-9 of two-pass; N=1 gives zero variance".into())
}

// 3 --------------------------------------------------------------------------

fn sampling_contract() -> Outcome {
    let g = Generator::new(GeneratorConfig {
        codebook_size: 8,
        latent_dim: 3,
        grid: 4,
        resolution: 16,
        hidden: vec![4],
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mean = LatentGrid::new(16, 3, (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let reference = g.decode(&mean).map_err(|e| e.to_string())?;
    for mode in [SamplingMode::Mean, SamplingMode::MeanPlusSigma, SamplingMode::MeanPlusSigmaEps] {
        let set = g
            .generate_set(&mean, &VarianceGrid::zeros(16, 3), 5, mode, &mut ChaCha8Rng::seed_from_u64(5))
            .map_err(|e| e.to_string())?;
        ensure(set.len() == 5 && set.iter().all(|x| x == &reference), || format!("{mode:?} differs from decode(E)"))?;
    }
    let var = VarianceGrid::new(16, 3, vec![0.05; 48]).unwrap();
    let draw = || g.generate_set(&mean, &var, 5, SamplingMode::MeanPlusSigmaEps, &mut ChaCha8Rng::seed_from_u64(9));
    let (a, b) = (draw().map_err(|e| e.to_string())?, draw().map_err(|e| e.to_string())?);
    ensure(a == b, || "seeded reruns differ".into())?;
    Ok("zero variance decodes E in all modes; seeded reruns identical".into())
}

// 4 --------------------------------------------------------------------------

const FD_STEP: f64 = 1e-4;
const MICRO_RES: usize = 8;

struct Frozen {
    z0: Vec<LatentGrid>,
    q0: Vec<LatentGrid>,
    variance: VarianceGrid,
}

fn pixel_mse(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let n = a.data().len() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Total objective with codebook indices, straight-through offsets and the
/// variance frozen at the base point, so it is smooth in the parameters.
fn surrogate(g: &Generator, f: &Frozen, original: &ImageTensor, views: &[ImageTensor], noise: &[Vec<f64>]) -> f64 {
    let cfg = g.config();
    let dim = cfg.latent_dim;
    let n = views.len() as f64;
    let mut vq = 0.0;
    let mut passed = Vec::new();
    for (i, view) in views.iter().enumerate() {
        let z = g.encode(view).unwrap();
        let (z0, q0) = (f.z0[i].values(), f.q0[i].values());
        let r: Vec<f64> = z.values().iter().zip(q0.iter().zip(z0)).map(|(a, (q, b))| a + (q - b)).collect();
        let r = LatentGrid::new(z.positions(), dim, r).unwrap();
        let recon = g.decode(&r).unwrap();
        let (mut codebook, mut commit) = (0.0, 0.0);
        for (d, &k) in f.q0[i].indices().unwrap().iter().enumerate() {
            let e = g.codebook().row(k);
            for c in 0..dim {
                codebook += (z0[d * dim + c] - e[c]).powi(2);
                commit += (z.values()[d * dim + c] - q0[d * dim + c]).powi(2);
            }
        }
        vq += pixel_mse(&recon, view) + (codebook + cfg.beta * commit) / z0.len() as f64;
        passed.push(r);
    }
    vq /= n;
    let len = passed[0].values().len();
    let mut mean = vec![0.0; len];
    for r in &passed {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    let mean = LatentGrid::new(passed[0].positions(), dim, mean).unwrap();
    let mut mse = 0.0;
    for eps in noise {
        let s = sample_with_noise(&mean, &f.variance, cfg.sampling_mode, eps).unwrap();
        mse += pixel_mse(&g.decode(&s).unwrap(), original);
    }
    mse / noise.len() as f64 + cfg.lambda * vq
}

fn gradient_draw(seed: u64, mode: SamplingMode) -> Result<f64, String> {
    let mut g = Generator::new(GeneratorConfig {
        codebook_size: 4,
        latent_dim: 2,
        grid: 2,
        resolution: MICRO_RES,
        hidden: vec![3],
        seed,
        sampling_mode: mode,
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let original = ImageTensor::from_fn(MICRO_RES, MICRO_RES, 3, |y, x, c| {
        0.5 + 0.4 * ((y as f64) * 0.37 + (x as f64) * 0.23 + c as f64).sin()
    });
    let views = vec![
        ImageTensor::filled(MICRO_RES, MICRO_RES, 3, 0.05),
        ImageTensor::filled(MICRO_RES, MICRO_RES, 3, 0.95),
        ImageTensor::from_fn(MICRO_RES, MICRO_RES, 3, |y, _, _| if (y / 2) % 2 == 0 { 0.0 } else { 1.0 }),
    ];
    g.init_codebook_from(&views, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x77))
        .map_err(|e| e.to_string())?;
    let noise: Vec<Vec<f64>> = (0..3).map(|m| (0..8).map(|j| ((m * 8 + j) as f64 * 0.91).cos()).collect()).collect();
    let z0: Vec<LatentGrid> = views.iter().map(|v| g.encode(v).unwrap()).collect();
    let q0: Vec<LatentGrid> = z0.iter().map(|z| quantize(z, g.codebook()).unwrap()).collect();
    let (_, variance) = estimate_statistics(&q0).unwrap();
    let frozen = Frozen { z0, q0, variance };

    let (_, grads) = g.loss_and_gradients(std::slice::from_ref(&original), &views, &noise).map_err(|e| e.to_string())?;
    let theta = g.params().flat();
    let analytic = grads.flat();
    let mut probe = g.clone();
    let mut num = vec![0.0; theta.len()];
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] = theta[j] + FD_STEP;
        probe.params_mut().set_flat(&t);
        let plus = surrogate(&probe, &frozen, &original, &views, &noise);
        t[j] = theta[j] - FD_STEP;
        probe.params_mut().set_flat(&t);
        let minus = surrogate(&probe, &frozen, &original, &views, &noise);
        num[j] = (plus - minus) / (2.0 * FD_STEP);
    }
    let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok(diff / scale.max(1e-12))
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let modes = [SamplingMode::Mean, SamplingMode::MeanPlusSigma, SamplingMode::MeanPlusSigmaEps];
    let mut worst: f64 = 0.0;
    for draw in 0..20u64 {
        let err = gradient_draw(300 + draw, modes[draw as usize % 3])?;
        ensure(err <= 1e-3, || format!("draw {draw}: relative error {err:.3e}"))?;
        worst = worst.max(err);
    }
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("20 draws, worst relative error {worst:.2e}"))
}

// 5 --------------------------------------------------------------------------

fn training_descent() -> Outcome {
    let t = Instant::now();
    let set: Vec<ImageTensor> = (0..4)
        .map(|k| {
            ImageTensor::from_fn(16, 16, 3, |y, x, c| {
                let d = ((y as f64 - 8.0).powi(2) + (x as f64 - 4.0 - 2.0 * k as f64).powi(2)).sqrt();
                if d < 5.0 { [0.55, 0.35, 0.2][c] + 0.025 * k as f64 } else { 0.1 }
            })
        })
        .collect();
    let mut g = Generator::new(GeneratorConfig {
        codebook_size: 16,
        latent_dim: 4,
        grid: 4,
        resolution: 16,
        hidden: vec![8],
        seed: 0,
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    g.init_codebook_from(&set, &mut rng).map_err(|e| e.to_string())?;
    let mut losses = Vec::new();
    for _ in 0..50 {
        losses.push(g.train_step(&set, &set, 4, &mut rng).map_err(|e| e.to_string())?.total);
    }
    let ratio = losses[49] / losses[0];
    ensure(ratio <= 0.8, || format!("final/initial = {ratio:.3}"))?;
    within(t.elapsed(), Duration::from_secs(30))?;
    Ok(format!("final/initial loss {ratio:.3}"))
}

// 6 --------------------------------------------------------------------------

fn embedded(rows: &[Vec<f64>]) -> Vec<EmbeddedCandidate> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| EmbeddedCandidate {
            candidate: PromptCandidate::new("widget", &format!("status{i}"), i).unwrap(),
            embedding: EmbeddingVector::raw(r.clone()).unwrap(),
        })
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn prompt_selection() -> Outcome {
    // candidate 7 points almost exactly along the image direction
    let image = vec![1.0, 2.0, -1.0, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rows: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    rows[7] = image.iter().map(|v| v * 3.0 + 0.01).collect();
    let cands = embedded(&rows);
    let members: Vec<usize> = (0..rows.len()).collect();
    let img = EmbeddingVector::raw(image.clone()).unwrap();
    for scale in [0.01, 1.0, 100.0] {
        let s = select_best_prompt("widget", &cands, &members, &img.scaled(scale), Fallback::Error, SelectionMode::Exhaustive)
            .map_err(|e| e.to_string())?;
        let best = s.best.ok_or("no best")?.index;
        ensure(best == 7, || format!("scale {scale}: picked {best}"))?;
    }

    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let image: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u = unit(&image);
    for (threshold, cmp) in [(1.4, Comparator::Greater), (1.4, Comparator::Less), (1.0, Comparator::Greater)] {
        let want: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                let d = unit(r).iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                match cmp {
                    Comparator::Greater => d > threshold,
                    Comparator::Less => d < threshold,
                }
            })
            .map(|(i, _)| i)
            .collect();
        let got = filter_outliers(&embedded(&rows), &EmbeddingVector::raw(image.clone()).unwrap(), threshold, cmp)
            .map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{cmp:?} {threshold}: {} vs {} members", got.len(), want.len()))?;
    }
    Ok("constructed argmax found at scales 0.01/1/100; filter matches predicate on 100".into())
}

// 7 --------------------------------------------------------------------------

struct Stub(Vec<f64>);

impl SetScorer for Stub {
    fn score(&self, round_index: usize, _: &[ImageTensor]) -> varigen_core::Result<RoundScore> {
        Ok(RoundScore {
            score: self.0[round_index - 1],
            visual_feature: None,
        })
    }
}

fn tiny_run(scorer: &dyn SetScorer, rounds: usize, lr: f64, strategy: Strategy) -> Result<RunResult, String> {
    let mut g = Generator::new(GeneratorConfig {
        codebook_size: 4,
        latent_dim: 2,
        grid: 2,
        resolution: 8,
        hidden: vec![3],
        learning_rate: lr,
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let original = ImageTensor::from_fn(8, 8, 3, |y, x, c| ((y * 3 + x * 5 + c) % 7) as f64 / 7.0);
    let cfg = IntegratorConfig {
        rounds,
        copies: 3,
        augment: 2,
        steps_per_round: 1,
        strategy,
        memory_lean: false,
    };
    integrator::run(&[original], &PromptSelection::naive("widget", Vec::new()), &cfg, &mut g, scorer, 4, &mut |_| {})
        .map_err(|e| e.to_string())
}

fn integrator_argmax() -> Outcome {
    let scores = vec![0.2, 0.9, 0.9, 0.1, 0.5];
    let a = tiny_run(&Stub(scores.clone()), 5, 0.05, Strategy::Strategies1)?.alpha;
    ensure(a == 2, || format!("alpha {a}"))?;
    for f in [|s: f64| 3.0 * s - 1.0, |s: f64| s.exp(), |s: f64| s.powi(3)] {
        let t = tiny_run(&Stub(scores.iter().map(|&s| f(s)).collect()), 5, 0.05, Strategy::Strategies1)?.alpha;
        ensure(t == 2, || format!("transformed alpha {t}"))?;
    }
    let backend = ToyEmbedder::new();
    let scorer = EmbeddingScorer::new("a photo of a widget", &backend).map_err(|e| e.to_string())?;
    let frozen = tiny_run(&scorer, 4, 0.0, Strategy::Identity)?;
    ensure(frozen.alpha == 1, || format!("frozen alpha {}", frozen.alpha))?;
    for r in &frozen.rounds[1..] {
        ensure(r.images == frozen.rounds[0].images && r.score == frozen.rounds[0].score, || {
            format!("round {} differs", r.round_index)
        })?;
    }
    Ok("alpha = 2, invariant under 3 increasing transforms; frozen run alpha = 1".into())
}

// 8 --------------------------------------------------------------------------

fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (p, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (n, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

fn auroc_oracle() -> Outcome {
    let err = |e: varigen_core::Error| e.to_string();
    let s = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
    let l = [false, false, false, true, true, true];
    let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
    ensure(auroc(&s, &l).map_err(err)? == 1.0, || "perfect separation is not 1.0".into())?;
    ensure(auroc(&s, &flipped).map_err(err)? == 0.0, || "flipped labels are not 0.0".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for set in 0..20 {
        let n = rng.random_range(4..60);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auroc(&scores, &labels).map_err(err)?;
        let o = pairwise(&scores, &labels);
        ensure((a - o).abs() <= 1e-12, || format!("set {set}: {a} vs {o}"))?;
        let mapped: Vec<f64> = scores.iter().map(|v| (2.0 * v).exp() + 5.0).collect();
        ensure(auroc(&mapped, &labels).map_err(err)? == a, || format!("set {set}: not monotone invariant"))?;
    }
    Ok("1.0 / 0.0 exact; 20 sets match Mann-Whitney within 1e-12; monotone invariant".into())
}

// 9 --------------------------------------------------------------------------

fn varigen(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_varigen"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "varigen {} exited {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn detection(run: &Path, file: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(run.join(file)).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["detection_auroc"].as_f64().ok_or_else(|| format!("{file}: no detection_auroc"))
}

fn end_to_end_trend(work: &Path) -> Outcome {
    let t = Instant::now();
    let seed = REFERENCE_SEED.to_string();
    let mut aug = BTreeMap::new();
    let mut line = Vec::new();
    for scenario in ["one_shot", "few_shot"] {
        let run = work.join(format!("trend_{scenario}"));
        varigen(&["pipeline", "--seed", &seed, "--scenario", scenario, "--out", run.to_str().unwrap()])?;
        let b = detection(&run, "eval_baseline.json")?;
        let a = detection(&run, "eval_augmented.json")?;
        line.push(format!("{scenario} {b:.3} -> {a:.3}"));
        aug.insert(scenario, (b, a));
    }
    let elapsed = t.elapsed();
    let (b1, a1) = aug["one_shot"];
    let (_, a5) = aug["few_shot"];
    let summary = format!("seed {REFERENCE_SEED}: {}, {elapsed:.0?}", line.join(", "));
    ensure(a1 > b1, || format!("one-shot augmented not above baseline ({summary})"))?;
    ensure(a5 >= a1, || format!("few-shot augmented below one-shot augmented ({summary})"))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(summary)
}

// 10 -------------------------------------------------------------------------

fn windowed_ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w, c) = a.shape();
    let n = SSIM_WINDOW;
    let r = (n / 2) as f64;
    let mut wts: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = ((k / n) as f64 - r, (k % n) as f64 - r);
            (-(i * i + j * j) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= total);
    let mut sum = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        for y in 0..=h - n {
            for x in 0..=w - n {
                let mut m = [0.0; 5];
                for (k, &g) in wts.iter().enumerate() {
                    let (u, v) = (a.get(y + k / n, x + k % n, ch), b.get(y + k / n, x + k % n, ch));
                    m[0] += g * u;
                    m[1] += g * v;
                    m[2] += g * u * u;
                    m[3] += g * v * v;
                    m[4] += g * u * v;
                }
                let (vx, vy, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                acc += ((2.0 * m[0] * m[1] + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((m[0] * m[0] + m[1] * m[1] + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        sum += acc / ((h - n + 1) * (w - n + 1)) as f64;
    }
    sum / c as f64
}

fn quality_metrics() -> Outcome {
    let err = |e: varigen_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = ImageTensor::from_fn(24, 24, 3, |y, x, c| 0.5 + 0.4 * ((y * 2 + x + c) as f64 * 0.3).sin());
    ensure(ssim(&x, &x).map_err(err)? == 1.0, || "ssim(x, x) != 1".into())?;
    ensure(psnr_from_mse(0.01) == 20.0, || format!("psnr(0.01) = {}", psnr_from_mse(0.01)))?;
    let mut ladder = Vec::new();
    let mut worst: f64 = 0.0;
    for amp in [0.02, 0.05, 0.1, 0.2, 0.4] {
        let data = x.data().iter().map(|v| (v + amp * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)).collect();
        let y = ImageTensor::from_vec(24, 24, 3, data).unwrap();
        ladder.push(psnr(&x, &y).map_err(err)?);
        worst = worst.max((ssim(&x, &y).map_err(err)? - windowed_ssim(&x, &y)).abs());
    }
    ensure(ladder.windows(2).all(|p| p[0] > p[1]), || format!("PSNR ladder not decreasing: {ladder:?}"))?;
    ensure(worst <= 1e-6, || format!("SSIM off the windowed oracle by {worst:.2e}"))?;
    Ok(format!("exact identities hold; ladder decreasing; SSIM within {worst:.1e} of oracle"))
}

// 11 -------------------------------------------------------------------------

fn tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn reproducibility(work: &Path) -> Outcome {
    let (a, b) = (work.join("repro_a"), work.join("repro_b"));
    for dir in [&a, &b] {
        varigen(&["pipeline", "--seed", "0", "--out", dir.to_str().unwrap()])?;
    }
    let (ta, tb) = (tree(&a)?, tree(&b)?);
    ensure(ta.keys().eq(tb.keys()), || "run directories list different files".into())?;
    for (path, bytes) in &ta {
        ensure(&tb[path] == bytes, || format!("{} differs", path.display()))?;
    }
    for required in ["manifest.json", "best/000.png", "report/scores.csv", "report/quality.csv", "report/auroc.csv"] {
        ensure(ta.contains_key(Path::new(required)), || format!("missing {required}"))?;
    }
    Ok(format!("{} files byte-identical across two runs", ta.len()))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "quantization oracle", Box::new(quantization_oracle)),
        (2, "statistics oracle", Box::new(statistics_oracle)),
        (3, "sampling contract", Box::new(sampling_contract)),
        (4, "gradient check", Box::new(gradient_check)),
        (5, "training descent", Box::new(training_descent)),
        (6, "prompt selection", Box::new(prompt_selection)),
        (7, "integrator argmax", Box::new(integrator_argmax)),
        (8, "AUROC oracle", Box::new(auroc_oracle)),
        (9, "end-to-end trend", Box::new(move || end_to_end_trend(w))),
        (10, "quality metrics", Box::new(quality_metrics)),
        (11, "reproducibility", Box::new(move || reproducibility(w))),
    ];
    let mut failed = 0;
    for (n, name, check) in &criteria {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {n:2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:2} FAIL  {name}: {why}");
            }
        }
    }
    println!("criterion 12 MANUAL full-scale reproduction, see README");
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
