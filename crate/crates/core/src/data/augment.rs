//! Label-preserving augmentations and the named strategies built from them.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const CROP_RETAIN: (f64, f64) = (0.85, 0.95);
pub const ROTATION_DEGREES: f64 = 15.0;
pub const JITTER: f64 = 0.2;
pub const BLUR_SIGMA: (f64, f64) = (0.5, 1.5);
pub const SHARPNESS: (f64, f64) = (0.5, 2.0);
pub const AUTOCONTRAST_CUTOFF: f64 = 0.01;

/// One operation with the parameters that were drawn for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AppliedOp {
    Crop { retain: f64, top: f64, left: f64 },
    ColorJitter { brightness: f64, contrast: f64 },
    Rotation { degrees: f64 },
    GaussianBlur { sigma: f64 },
    Sharpness { factor: f64 },
    Autocontrast { cutoff: f64 },
    NoiseReduction,
}

impl AppliedOp {
    pub fn apply(&self, image: &ImageTensor) -> ImageTensor {
        match *self {
            AppliedOp::Crop { retain, top, left } => crop_resize(image, retain, top, left),
            AppliedOp::ColorJitter {
                brightness,
                contrast,
            } => color_jitter(image, brightness, contrast),
            AppliedOp::Rotation { degrees } => rotate(image, degrees),
            AppliedOp::GaussianBlur { sigma } => gaussian_blur(image, sigma),
            AppliedOp::Sharpness { factor } => sharpness(image, factor),
            AppliedOp::Autocontrast { cutoff } => autocontrast(image, cutoff),
            AppliedOp::NoiseReduction => median3(image),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "identity")]
    Identity,
    /// Random crop and color jitter.
    #[serde(rename = "strategies-1")]
    Strategies1,
    /// Random rotation and autocontrast.
    #[serde(rename = "strategies-2")]
    Strategies2,
    /// One operation drawn uniformly from the six-operation pool.
    #[serde(rename = "random-pick")]
    RandomPick,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Identity => "identity",
            Strategy::Strategies1 => "strategies-1",
            Strategy::Strategies2 => "strategies-2",
            Strategy::RandomPick => "random-pick",
        }
    }

    /// Draws the operations for one sample.
    pub fn draw(self, rng: &mut impl Rng) -> Vec<AppliedOp> {
        match self {
            Strategy::Identity => Vec::new(),
            Strategy::Strategies1 => vec![draw_crop(rng), draw_jitter(rng)],
            Strategy::Strategies2 => vec![
                draw_rotation(rng),
                AppliedOp::Autocontrast {
                    cutoff: AUTOCONTRAST_CUTOFF,
                },
            ],
            Strategy::RandomPick => vec![match rng.random_range(0..6) {
                0 => AppliedOp::GaussianBlur {
                    sigma: rng.random_range(BLUR_SIGMA.0..=BLUR_SIGMA.1),
                },
                1 => AppliedOp::NoiseReduction,
                2 => draw_rotation(rng),
                3 => AppliedOp::Sharpness {
                    factor: rng.random_range(SHARPNESS.0..=SHARPNESS.1),
                },
                4 => AppliedOp::Autocontrast {
                    cutoff: AUTOCONTRAST_CUTOFF,
                },
                _ => draw_jitter(rng),
            }],
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Strategy::Identity),
            "strategies-1" => Ok(Strategy::Strategies1),
            "strategies-2" => Ok(Strategy::Strategies2),
            "random-pick" => Ok(Strategy::RandomPick),
            other => Err(Error::UnknownStrategy(other.to_string())),
        }
    }
}

fn draw_crop(rng: &mut impl Rng) -> AppliedOp {
    AppliedOp::Crop {
        retain: rng.random_range(CROP_RETAIN.0..=CROP_RETAIN.1),
        top: rng.random_range(0.0..=1.0),
        left: rng.random_range(0.0..=1.0),
    }
}

fn draw_jitter(rng: &mut impl Rng) -> AppliedOp {
    AppliedOp::ColorJitter {
        brightness: rng.random_range(1.0 - JITTER..=1.0 + JITTER),
        contrast: rng.random_range(1.0 - JITTER..=1.0 + JITTER),
    }
}

fn draw_rotation(rng: &mut impl Rng) -> AppliedOp {
    AppliedOp::Rotation {
        degrees: rng.random_range(-ROTATION_DEGREES..=ROTATION_DEGREES),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    /// Index into the originals.
    pub source: usize,
    pub ops: Vec<AppliedOp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub images: Vec<ImageTensor>,
    pub records: Vec<AugmentRecord>,
}

/// `n` augmented views; sample `i` starts from original `i % originals.len()`.
pub fn augment(
    originals: &[ImageTensor],
    strategy: Strategy,
    n: usize,
    rng: &mut impl Rng,
) -> Result<AugmentedSet> {
    if originals.is_empty() {
        return Err(Error::EmptyImageSet);
    }
    if n == 0 {
        return Err(Error::EmptyInput("augmentation count"));
    }
    let mut images = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let source = i % originals.len();
        let ops = strategy.draw(rng);
        let mut img = originals[source].clone();
        for op in &ops {
            img = op.apply(&img);
        }
        images.push(img);
        records.push(AugmentRecord { source, ops });
    }
    Ok(AugmentedSet { images, records })
}

/// Crops a `retain`-sized window at relative offset (`top`, `left`) and
/// resizes it back to the input size.
pub fn crop_resize(image: &ImageTensor, retain: f64, top: f64, left: f64) -> ImageTensor {
    let (h, w, c) = image.shape();
    let ch = h as f64 * retain;
    let cw = w as f64 * retain;
    let y0 = (h as f64 - ch) * top;
    let x0 = (w as f64 - cw) * left;
    ImageTensor::from_fn(h, w, c, |y, x, k| {
        let sy = y0 + (y as f64 + 0.5) * ch / h as f64 - 0.5;
        let sx = x0 + (x as f64 + 0.5) * cw / w as f64 - 0.5;
        image.sample_bilinear(sy, sx, k)
    })
}

fn gray_mean(image: &ImageTensor) -> f64 {
    let g = image.to_gray();
    g.data().iter().sum::<f64>() / g.data().len() as f64
}

/// Brightness scales values; contrast blends toward the mean gray level.
pub fn color_jitter(image: &ImageTensor, brightness: f64, contrast: f64) -> ImageTensor {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    let mean = gray_mean(&out);
    for v in out.data_mut() {
        *v = (mean + contrast * (*v - mean)).clamp(0.0, 1.0);
    }
    out
}

/// Rotation about the image center with bilinear sampling; samples falling
/// outside are edge-clamped.
pub fn rotate(image: &ImageTensor, degrees: f64) -> ImageTensor {
    let (h, w, c) = image.shape();
    let (s, co) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    ImageTensor::from_fn(h, w, c, |y, x, k| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let sy = cy + co * dy - s * dx;
        let sx = cx + s * dy + co * dx;
        image.sample_bilinear(sy, sx, k)
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> ImageTensor {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = image.shape();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horiz = ImageTensor::from_fn(h, w, c, |y, x, ch| {
        k.iter()
            .enumerate()
            .map(|(i, wt)| wt * image.get(y, clamp(x as isize + i as isize - r, w), ch))
            .sum()
    });
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        k.iter()
            .enumerate()
            .map(|(i, wt)| wt * horiz.get(clamp(y as isize + i as isize - r, h), x, ch))
            .sum()
    })
}

/// Blends with a 3x3 smoothed copy: factor 0 is smooth, 1 is the input,
/// above 1 sharpens. Border pixels are left unchanged.
pub fn sharpness(image: &ImageTensor, factor: f64) -> ImageTensor {
    let (h, w, c) = image.shape();
    if h < 3 || w < 3 {
        return image.clone();
    }
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        let v = image.get(y, x, ch);
        if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
            return v;
        }
        let mut acc = 4.0 * v;
        for dy in 0..3 {
            for dx in 0..3 {
                acc += image.get(y + dy - 1, x + dx - 1, ch);
            }
        }
        let smooth = acc / 13.0;
        (smooth + factor * (v - smooth)).clamp(0.0, 1.0)
    })
}

/// Per-channel linear stretch after discarding `cutoff` of the histogram at
/// each end (256 bins).
pub fn autocontrast(image: &ImageTensor, cutoff: f64) -> ImageTensor {
    let (h, w, c) = image.shape();
    let n = h * w;
    let mut out = image.clone();
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for y in 0..h {
            for x in 0..w {
                hist[(image.get(y, x, ch).clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
            }
        }
        let cut = (n as f64 * cutoff) as usize;
        let mut acc = 0;
        let mut lo = 0;
        while lo < 255 && acc + hist[lo] <= cut {
            acc += hist[lo];
            lo += 1;
        }
        acc = 0;
        let mut hi = 255;
        while hi > 0 && acc + hist[hi] <= cut {
            acc += hist[hi];
            hi -= 1;
        }
        if hi <= lo {
            continue;
        }
        let (lo, hi) = (lo as f64 / 255.0, hi as f64 / 255.0);
        for y in 0..h {
            for x in 0..w {
                let v = (image.get(y, x, ch) - lo) / (hi - lo);
                out.set(y, x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// 3x3 median filter with edge clamping.
pub fn median3(image: &ImageTensor) -> ImageTensor {
    let (h, w, c) = image.shape();
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        let mut win = [0.0; 9];
        let mut i = 0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                win[i] = image.get(yy, xx, ch);
                i += 1;
            }
        }
        win.sort_by(|a, b| a.total_cmp(b));
        win[4]
    })
}
