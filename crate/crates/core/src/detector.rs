//! Memory-bank patch anomaly detector and AUROC evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::augment::gaussian_blur;
use crate::data::{Label, ScenarioKind};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Patch features on a regular grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub patch: usize,
    pub stride: usize,
    pub features: Vec<f64>,
}

impl PatchGrid {
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait PatchBackbone: Send + Sync {
    fn identifier(&self) -> &str;
    fn extract(&self, image: &ImageTensor) -> Result<PatchGrid>;
}

/// Per channel over each patch: mean, std, mean |dx|, mean |dy|.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyBackbone {
    pub patch: usize,
    pub stride: usize,
}

impl Default for ToyBackbone {
    fn default() -> Self {
        Self {
            patch: 8,
            stride: 4,
        }
    }
}

impl PatchBackbone for ToyBackbone {
    fn identifier(&self) -> &str {
        "toy"
    }

    fn extract(&self, image: &ImageTensor) -> Result<PatchGrid> {
        let (h, w, c) = image.shape();
        let p = self.patch;
        if h < p || w < p || self.stride == 0 {
            return Err(Error::UnsupportedImageShape {
                height: h,
                width: w,
                channels: c,
                reason: format!("smaller than the {p}x{p} detector patch"),
            });
        }
        let rows = (h - p) / self.stride + 1;
        let cols = (w - p) / self.stride + 1;
        let dim = 4 * c;
        let mut features = Vec::with_capacity(rows * cols * dim);
        let n = (p * p) as f64;
        let ng = (p * (p - 1)) as f64;
        for r in 0..rows {
            for q in 0..cols {
                let (y0, x0) = (r * self.stride, q * self.stride);
                for ch in 0..c {
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for y in y0..y0 + p {
                        for x in x0..x0 + p {
                            let v = image.get(y, x, ch);
                            sum += v;
                            sq += v * v;
                            if x + 1 < x0 + p {
                                gx += (image.get(y, x + 1, ch) - v).abs();
                            }
                            if y + 1 < y0 + p {
                                gy += (image.get(y + 1, x, ch) - v).abs();
                            }
                        }
                    }
                    let mean = sum / n;
                    let var = (sq / n - mean * mean).max(0.0);
                    features.extend_from_slice(&[mean, var.sqrt(), gx / ng, gy / ng]);
                }
            }
        }
        Ok(PatchGrid {
            rows,
            cols,
            dim,
            patch: p,
            stride: self.stride,
            features,
        })
    }
}

/// `toy`, or a pretrained CNN id that is not shipped.
pub fn backbone_from_id(id: &str) -> Result<Box<dyn PatchBackbone>> {
    match id {
        "toy" => Ok(Box::new(ToyBackbone::default())),
        "wide_resnet50" | "wide-resnet50" | "resnet18" => {
            Err(Error::BackendUnavailable(id.to_string()))
        }
        other => Err(Error::Config(format!("unknown detector backbone `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub dim: usize,
    pub features: Vec<f64>,
    pub n_originals: usize,
    pub n_generated: usize,
    pub coreset_fraction: f64,
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_features(dim: usize, features: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.is_empty() || !features.len().is_multiple_of(dim) {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(Self {
            dim,
            features,
            n_originals: 0,
            n_generated: 0,
            coreset_fraction: 1.0,
        })
    }

    /// Distance from `f` to its nearest bank feature.
    pub fn nearest_distance(&self, f: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for b in self.features.chunks_exact(self.dim) {
            let mut d = 0.0;
            for (x, y) in f.iter().zip(b) {
                let t = x - y;
                d += t * t;
            }
            if d < best {
                best = d;
            }
        }
        best.sqrt()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-point selection of `k` rows from `points` (row-major,
/// `dim` wide). Starts at a seeded random row; ties go to the lowest index.
pub fn k_center_greedy(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len() / dim;
    if k == 0 || n == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    while chosen.len() < k {
        let mut best = 0;
        for i in 1..n {
            if min_d[i] > min_d[best] {
                best = i;
            }
        }
        chosen.push(best);
        for i in 0..n {
            let d = sq_dist(row(i), row(best));
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    chosen
}

/// Number of features kept for a given fraction.
pub fn coreset_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Pools patch features of originals and generated images; subsamples by
/// k-center greedy when `coreset_fraction < 1`.
pub fn build_bank(
    originals: &[ImageTensor],
    generated: &[ImageTensor],
    coreset_fraction: f64,
    backbone: &dyn PatchBackbone,
    rng: &mut impl Rng,
) -> Result<FeatureBank> {
    if originals.is_empty() && generated.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(coreset_fraction > 0.0 && coreset_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "coreset fraction {coreset_fraction} outside (0, 1]"
        )));
    }
    let grids: Vec<PatchGrid> = originals
        .par_iter()
        .chain(generated.par_iter())
        .map(|img| backbone.extract(img))
        .collect::<Result<_>>()?;
    let dim = grids[0].dim;
    if grids.iter().any(|g| g.dim != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: grids.iter().find(|g| g.dim != dim).map_or(0, |g| g.dim),
        });
    }
    let all: Vec<f64> = grids.into_iter().flat_map(|g| g.features).collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("non-finite patch feature".into()));
    }
    let features = if coreset_fraction >= 1.0 {
        all
    } else {
        let n = all.len() / dim;
        let keep = k_center_greedy(&all, dim, coreset_size(n, coreset_fraction), rng);
        keep.iter()
            .flat_map(|&i| all[i * dim..(i + 1) * dim].iter().copied())
            .collect()
    };
    Ok(FeatureBank {
        dim,
        features,
        n_originals: originals.len(),
        n_generated: generated.len(),
        coreset_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScore {
    pub image_score: f64,
    pub score_map: ImageTensor,
}

/// Detector smoothing sigma: 4 px at 64 px, proportional otherwise.
pub fn smoothing_sigma(height: usize) -> f64 {
    4.0 * height as f64 / 64.0
}

fn nearest_patch(pos: usize, patch: usize, stride: usize, count: usize) -> usize {
    let center0 = (patch as f64 - 1.0) / 2.0;
    let idx = ((pos as f64 - center0) / stride as f64).round();
    idx.clamp(0.0, (count - 1) as f64) as usize
}

pub fn score_image(
    image: &ImageTensor,
    bank: &FeatureBank,
    backbone: &dyn PatchBackbone,
) -> Result<AnomalyScore> {
    let grid = backbone.extract(image)?;
    if grid.dim != bank.dim {
        return Err(Error::DimensionMismatch {
            expected: bank.dim,
            actual: grid.dim,
        });
    }
    let patch_scores: Vec<f64> = (0..grid.len())
        .map(|i| bank.nearest_distance(grid.feature(i)))
        .collect();
    let (h, w) = (image.height(), image.width());
    let raw = ImageTensor::from_fn(h, w, 1, |y, x, _| {
        let r = nearest_patch(y, grid.patch, grid.stride, grid.rows);
        let q = nearest_patch(x, grid.patch, grid.stride, grid.cols);
        patch_scores[r * grid.cols + q]
    });
    let score_map = gaussian_blur(&raw, smoothing_sigma(h));
    let image_score = score_map.data().iter().copied().fold(0.0, f64::max);
    Ok(AnomalyScore {
        image_score,
        score_map,
    })
}

/// Mann–Whitney AUROC with ties counted half. `labels[i]` is true for the
/// anomalous (positive) class.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassInput {
            positives,
            negatives,
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::ShapeMismatch("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic, kept integral
    let mut two_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        two_u += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    let pairs = 2 * positives as u128 * negatives as u128;
    Ok(two_u as f64 / pairs as f64)
}

/// One evaluation image with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub name: String,
    pub image: ImageTensor,
    pub label: Label,
    pub mask: Option<ImageTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScoreRow {
    pub name: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: ScenarioKind,
    pub detection_auroc: f64,
    pub segmentation_auroc: f64,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub bank_size: usize,
    pub bank_originals: usize,
    pub bank_generated: usize,
    pub per_image: Vec<ImageScoreRow>,
}

pub fn evaluate(
    bank: &FeatureBank,
    backbone: &dyn PatchBackbone,
    test: &[LabeledImage],
    scenario: ScenarioKind,
) -> Result<EvalReport> {
    for t in test {
        if t.label == Label::Anomalous && t.mask.is_none() {
            return Err(Error::MissingMask(t.name.clone()));
        }
    }
    let scores: Vec<AnomalyScore> = test
        .par_iter()
        .map(|t| score_image(&t.image, bank, backbone))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = test.iter().map(|t| t.label == Label::Anomalous).collect();
    let image_scores: Vec<f64> = scores.iter().map(|s| s.image_score).collect();
    let detection_auroc = auroc(&image_scores, &labels)?;

    let mut pixel_scores = Vec::new();
    let mut pixel_labels = Vec::new();
    for (t, s) in test.iter().zip(&scores) {
        debug_assert_eq!(
            s.image_score,
            s.score_map.data().iter().copied().fold(0.0, f64::max)
        );
        pixel_scores.extend_from_slice(s.score_map.data());
        match &t.mask {
            Some(m) => {
                if (m.height(), m.width()) != (t.image.height(), t.image.width()) {
                    return Err(Error::ShapeMismatch(format!("mask size for {}", t.name)));
                }
                pixel_labels.extend(m.data().iter().map(|&v| v >= 0.5));
            }
            None => pixel_labels.extend(std::iter::repeat_n(false, s.score_map.data().len())),
        }
    }
    let segmentation_auroc = auroc(&pixel_scores, &pixel_labels)?;
    let n_anomalous = labels.iter().filter(|&&l| l).count();
    Ok(EvalReport {
        scenario,
        detection_auroc,
        segmentation_auroc,
        n_normal: test.len() - n_anomalous,
        n_anomalous,
        bank_size: bank.len(),
        bank_originals: bank.n_originals,
        bank_generated: bank.n_generated,
        per_image: test
            .iter()
            .zip(&image_scores)
            .map(|(t, &score)| ImageScoreRow {
                name: t.name.clone(),
                label: t.label,
                score,
            })
            .collect(),
    })
}
