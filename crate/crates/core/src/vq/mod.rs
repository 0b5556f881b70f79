//! Variance-aware vector-quantized autoencoder.
//!
//! Images are encoded to a `D × C_lat` patch latent grid, snapped to the
//! nearest codebook rows, and summarized across augmented views by an
//! elementwise mean `E` and population variance `Σ`. New images are decoded
//! from latents sampled around `E` with spread `√Σ`.

pub mod checkpoint;
mod model;
pub mod nn;

pub use model::{mse_loss, Generator, GeneratorParams, LossBreakdown, TrainState};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `E`
    Mean,
    /// `E + √Σ`
    MeanPlusSigma,
    /// `E + √Σ ⊙ ε`, `ε ~ N(0, I)`
    MeanPlusSigmaEps,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "mean_plus_sigma" => Ok(Self::MeanPlusSigma),
            "mean_plus_sigma_eps" => Ok(Self::MeanPlusSigmaEps),
            other => Err(Error::Config(format!("unknown sampling mode `{other}`"))),
        }
    }
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::MeanPlusSigma => "mean_plus_sigma",
            Self::MeanPlusSigmaEps => "mean_plus_sigma_eps",
        }
    }
}

/// Which latents the variance is estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    Quantized,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub codebook_size: usize,
    pub latent_dim: usize,
    /// Latent grid side; `D = grid²`.
    pub grid: usize,
    /// Input/output image side.
    pub resolution: usize,
    pub channels: usize,
    /// Hidden widths between the image and latent ends, one per extra level.
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub sampling_mode: SamplingMode,
    pub variance_scalar_per_patch: bool,
    pub variance_source: VarianceSource,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            codebook_size: 64,
            latent_dim: 16,
            grid: 8,
            resolution: 64,
            channels: 3,
            hidden: vec![16, 32],
            lambda: 1.0,
            beta: 0.25,
            learning_rate: 0.05,
            seed: 0,
            sampling_mode: SamplingMode::MeanPlusSigmaEps,
            variance_scalar_per_patch: false,
            variance_source: VarianceSource::Quantized,
        }
    }
}

impl GeneratorConfig {
    /// Number of stride-2 levels between the image and the latent grid.
    pub fn levels(&self) -> Result<usize> {
        if self.grid == 0 || !self.resolution.is_multiple_of(self.grid) {
            return Err(Error::Config(format!(
                "resolution {} is not a multiple of grid {}",
                self.resolution, self.grid
            )));
        }
        let ratio = self.resolution / self.grid;
        if !ratio.is_power_of_two() || ratio < 2 {
            return Err(Error::Config(format!(
                "resolution/grid = {ratio} must be a power of two >= 2"
            )));
        }
        Ok(ratio.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.levels()?;
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook size K must be >= 2".into()));
        }
        if self.latent_dim < 1 || self.channels < 1 {
            return Err(Error::Config("latent_dim and channels must be >= 1".into()));
        }
        if self.lambda < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("lambda and beta must be >= 0".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if self.hidden.len() + 1 != levels {
            return Err(Error::Config(format!(
                "{levels} levels need {} hidden widths, got {}",
                levels - 1,
                self.hidden.len()
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.grid * self.grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn from_rows(size: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != size * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {size}x{dim} codebook",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("codebook has non-finite entries".into()));
        }
        Ok(Self { size, dim, vectors })
    }

    pub fn random(size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / size as f64;
        let vectors = (0..size * dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self { size, dim, vectors }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.vectors
    }

    /// Index of the nearest row in L2; ties go to the smallest index.
    pub fn nearest(&self, latent: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size {
            let d: f64 = self
                .row(k)
                .iter()
                .zip(latent)
                .map(|(e, z)| (z - e) * (z - e))
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn has_duplicate_rows(&self) -> bool {
        for a in 0..self.size {
            for b in a + 1..self.size {
                if self.row(a) == self.row(b) {
                    return true;
                }
            }
        }
        false
    }
}

/// `D × C_lat` patch latents, optionally tagged with codebook indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    positions: usize,
    dim: usize,
    values: Vec<f64>,
    indices: Option<Vec<usize>>,
}

impl LatentGrid {
    pub fn new(positions: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != positions * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {positions}x{dim} latent grid",
                values.len()
            )));
        }
        Ok(Self {
            positions,
            dim,
            values,
            indices: None,
        })
    }

    pub fn zeros(positions: usize, dim: usize) -> Self {
        Self {
            positions,
            dim,
            values: vec![0.0; positions * dim],
            indices: None,
        }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.values[d * self.dim..(d + 1) * self.dim]
    }

    pub fn indices(&self) -> Option<&[usize]> {
        self.indices.as_deref()
    }

    fn same_shape(&self, other: &LatentGrid) -> bool {
        self.positions == other.positions && self.dim == other.dim
    }
}

/// Elementwise variances matching a `LatentGrid`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceGrid {
    positions: usize,
    dim: usize,
    values: Vec<f64>,
}

impl VarianceGrid {
    pub fn new(positions: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != positions * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {positions}x{dim} variance grid",
                values.len()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NegativeVariance { index, value });
        }
        Ok(Self {
            positions,
            dim,
            values,
        })
    }

    pub fn zeros(positions: usize, dim: usize) -> Self {
        Self {
            positions,
            dim,
            values: vec![0.0; positions * dim],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replaces each position's channel variances by their mean.
    pub fn scalar_per_patch(&self) -> Self {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.dim) {
            let m = row.iter().sum::<f64>() / self.dim as f64;
            row.fill(m);
        }
        Self { values, ..*self }
    }
}

/// Snaps every row to its nearest codebook vector.
pub fn quantize(latents: &LatentGrid, codebook: &Codebook) -> Result<LatentGrid> {
    if latents.dim != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            actual: latents.dim,
        });
    }
    let mut values = Vec::with_capacity(latents.values.len());
    let mut indices = Vec::with_capacity(latents.positions);
    for d in 0..latents.positions {
        let k = codebook.nearest(latents.row(d));
        indices.push(k);
        values.extend_from_slice(codebook.row(k));
    }
    Ok(LatentGrid {
        positions: latents.positions,
        dim: latents.dim,
        values,
        indices: Some(indices),
    })
}

/// Elementwise mean and population variance across `grids`.
pub fn estimate_statistics(grids: &[LatentGrid]) -> Result<(LatentGrid, VarianceGrid)> {
    let first = grids.first().ok_or(Error::EmptyInput("latent grids"))?;
    if let Some(bad) = grids.iter().find(|g| !g.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!(
            "grid {}x{} vs {}x{}",
            bad.positions, bad.dim, first.positions, first.dim
        )));
    }
    // Welford accumulation.
    let len = first.values.len();
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    for (n, grid) in grids.iter().enumerate() {
        let count = (n + 1) as f64;
        for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(&grid.values) {
            let delta = x - *mu;
            *mu += delta / count;
            *s += delta * (x - *mu);
        }
    }
    let n = grids.len() as f64;
    let var = m2.into_iter().map(|s| (s / n).max(0.0)).collect();
    Ok((
        LatentGrid {
            positions: first.positions,
            dim: first.dim,
            values: mean,
            indices: None,
        },
        VarianceGrid {
            positions: first.positions,
            dim: first.dim,
            values: var,
        },
    ))
}

/// Standard-normal noise for one sample of a `positions × dim` grid.
pub fn draw_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `mean`, `mean + √Σ` or `mean + √Σ ⊙ noise`.
pub fn sample_with_noise(
    mean: &LatentGrid,
    variance: &VarianceGrid,
    mode: SamplingMode,
    noise: &[f64],
) -> Result<LatentGrid> {
    if mean.positions != variance.positions || mean.dim != variance.dim {
        return Err(Error::ShapeMismatch("mean and variance grids differ".into()));
    }
    if let Some((index, &value)) = variance.values.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeVariance { index, value });
    }
    let values = match mode {
        SamplingMode::Mean => mean.values.clone(),
        SamplingMode::MeanPlusSigma => mean
            .values
            .iter()
            .zip(&variance.values)
            .map(|(m, v)| m + v.sqrt())
            .collect(),
        SamplingMode::MeanPlusSigmaEps => {
            if noise.len() != mean.values.len() {
                return Err(Error::ShapeMismatch("noise length".into()));
            }
            mean.values
                .iter()
                .zip(&variance.values)
                .zip(noise)
                .map(|((m, v), e)| m + v.sqrt() * e)
                .collect()
        }
    };
    Ok(LatentGrid {
        positions: mean.positions,
        dim: mean.dim,
        values,
        indices: None,
    })
}

/// Draws one latent grid around `mean`. Only `MeanPlusSigmaEps` consumes `rng`.
pub fn sample_latents(
    mean: &LatentGrid,
    variance: &VarianceGrid,
    mode: SamplingMode,
    rng: &mut impl Rng,
) -> Result<LatentGrid> {
    let noise = match mode {
        SamplingMode::MeanPlusSigmaEps => draw_noise(mean.values.len(), rng),
        _ => Vec::new(),
    };
    sample_with_noise(mean, variance, mode, &noise)
}
