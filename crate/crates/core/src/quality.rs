//! SSIM and PSNR for generated-set diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully contained window position.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over channels and 'valid' window positions; 11x11 Gaussian
/// window with sigma 1.5 and dynamic range 1.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::UnsupportedImageShape {
            height: h,
            width: w,
            channels: c,
            reason: format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
        });
    }
    if a == b {
        return Ok(1.0);
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = (0..h * w).map(|i| a.data()[i * c + ch]).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| b.data()[i * c + ch]).collect();
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let (ma, oh, ow) = filter_valid(&pa, h, w, &k);
        let (mb, _, _) = filter_valid(&pb, h, w, &k);
        let (saa, _, _) = filter_valid(&paa, h, w, &k);
        let (sbb, _, _) = filter_valid(&pbb, h, w, &k);
        let (sab, _, _) = filter_valid(&pab, h, w, &k);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cov = sab[i] - mx * my;
            acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// `10·log10(1 / mse)`; `+inf` when the images are identical.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(a.mse(b)?))
}

/// Extra metrics such as IS or LPIPS that need external models.
pub trait QualityPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, original: &ImageTensor, set: &[ImageTensor]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub label: String,
    pub ssim: f64,
    /// `None` stands for +infinity (every image identical to the original).
    pub psnr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub plugins: BTreeMap<String, f64>,
}

impl QualityRow {
    pub fn psnr_or_inf(&self) -> f64 {
        self.psnr_db.unwrap_or(f64::INFINITY)
    }
}

/// One row per labeled set, averaging SSIM and PSNR against `original`.
/// PSNR is averaged in dB; any identical image makes the row infinite.
pub fn quality_table(
    original: &ImageTensor,
    sets: &[(String, Vec<ImageTensor>)],
    plugins: &[&dyn QualityPlugin],
) -> Result<Vec<QualityRow>> {
    sets.iter()
        .map(|(label, images)| {
            if images.is_empty() {
                return Err(Error::EmptyImageSet);
            }
            let n = images.len() as f64;
            let mut s = 0.0;
            let mut p = 0.0;
            for img in images {
                s += ssim(original, img)?;
                p += psnr(original, img)?;
            }
            let psnr = p / n;
            let mut extra = BTreeMap::new();
            for plugin in plugins {
                extra.insert(plugin.name().to_string(), plugin.score(original, images)?);
            }
            Ok(QualityRow {
                label: label.clone(),
                ssim: s / n,
                psnr_db: psnr.is_finite().then_some(psnr),
                plugins: extra,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks() -> ImageTensor {
        ImageTensor::from_fn(32, 32, 1, |_, x, _| if x < 16 { 0.0 } else { 1.0 })
    }

    #[test]
    fn identical_images() {
        let a = blocks();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn inverted_card_has_low_ssim() {
        let a = blocks();
        let inv = ImageTensor::from_fn(32, 32, 1, |y, x, c| 1.0 - a.get(y, x, c));
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.2, "{s}");
        assert!((s - ssim(&inv, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_closed_form() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        let a = ImageTensor::filled(4, 4, 1, 0.5);
        let b = ImageTensor::filled(4, 4, 1, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn table_rows_keep_order_and_sentinel() {
        let a = blocks();
        let dim = ImageTensor::from_fn(32, 32, 1, |y, x, c| 0.9 * a.get(y, x, c));
        let rows = quality_table(
            &a,
            &[("self".into(), vec![a.clone()]), ("dim".into(), vec![dim])],
            &[],
        )
        .unwrap();
        assert_eq!(rows[0].label, "self");
        assert_eq!(rows[0].ssim, 1.0);
        assert_eq!(rows[0].psnr_db, None);
        assert_eq!(rows[1].label, "dim");
        assert!(rows[1].psnr_db.unwrap() > 0.0);
    }
}
