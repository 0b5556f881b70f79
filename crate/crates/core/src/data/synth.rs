//! Procedural stand-in for an MVTec object category.
//!
//! Good images are a textured disc on a dark background with randomized
//! position, size, color and texture phase. Defect images add one planted
//! anomaly and record exactly the pixels it touched as the mask.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::write_image;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Scratch,
    Blob,
    MissingRegion,
}

impl DefectKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            DefectKind::Scratch => "scratch",
            DefectKind::Blob => "blob",
            DefectKind::MissingRegion => "missing_region",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    /// Only `disc` is implemented.
    pub family: String,
    /// Radius range as a fraction of the image side.
    pub radius: [f64; 2],
    /// Maximum center offset as a fraction of the image side.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub base_color: [f64; 3],
    pub background: [f64; 3],
    pub color_jitter: f64,
    /// Angular stripe count around the disc.
    pub stripes: u32,
    pub stripe_amplitude: f64,
    pub noise_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    /// Assigned round-robin to the defect images.
    pub kinds: Vec<DefectKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountSpec {
    pub train_good: usize,
    pub test_good: usize,
    pub defects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub category: String,
    pub resolution: usize,
    pub seed: u64,
    pub shapes: ShapeSpec,
    pub textures: TextureSpec,
    pub defects: DefectSpec,
    pub counts: CountSpec,
}

impl Default for SyntheticSpec {
    /// 20 good images (10 train, 10 test) and 10 defects at 64x64.
    fn default() -> Self {
        Self {
            category: "hazelnut".into(),
            resolution: 64,
            seed: 0,
            shapes: ShapeSpec {
                family: "disc".into(),
                radius: [0.30, 0.36],
                jitter: 0.05,
            },
            textures: TextureSpec {
                base_color: [0.55, 0.36, 0.18],
                background: [0.08, 0.08, 0.09],
                color_jitter: 0.04,
                stripes: 9,
                stripe_amplitude: 0.07,
                noise_amplitude: 0.02,
            },
            defects: DefectSpec {
                kinds: vec![DefectKind::Scratch, DefectKind::Blob, DefectKind::MissingRegion],
            },
            counts: CountSpec {
                train_good: 10,
                test_good: 10,
                defects: 10,
            },
        }
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.family != "disc" {
            return Err(Error::Config(format!(
                "unsupported shape family `{}`",
                self.shapes.family
            )));
        }
        if self.resolution < 16 {
            return Err(Error::Config("synthetic resolution must be >= 16".into()));
        }
        if self.counts.train_good == 0 {
            return Err(Error::Config("need at least one train/good image".into()));
        }
        if self.counts.defects > 0 && self.defects.kinds.is_empty() {
            return Err(Error::Config("defect count > 0 but no defect kinds".into()));
        }
        let [lo, hi] = self.shapes.radius;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return Err(Error::Config("radius range must satisfy 0 < lo <= hi < 0.5".into()));
        }
        Ok(())
    }
}

const SCRATCH_COLOR: [f64; 3] = [0.86, 0.80, 0.68];
const STAIN_COLOR: [f64; 3] = [0.30, 0.40, 0.16];

struct Disc {
    cy: f64,
    cx: f64,
    r: f64,
}

impl Disc {
    fn contains(&self, y: f64, x: f64) -> bool {
        (y - self.cy).powi(2) + (x - self.cx).powi(2) <= self.r * self.r
    }
}

/// A good rendering plus what defect planting needs to stay consistent with it.
struct Rendered {
    image: ImageTensor,
    disc: Disc,
    noise: Vec<f64>,
}

fn render_good(spec: &SyntheticSpec, rng: &mut impl Rng) -> Rendered {
    let n = spec.resolution as f64;
    let t = &spec.textures;
    let center = (n - 1.0) / 2.0;
    let jitter = spec.shapes.jitter * n;
    let disc = Disc {
        cy: center + rng.random_range(-jitter..=jitter),
        cx: center + rng.random_range(-jitter..=jitter),
        r: n * rng.random_range(spec.shapes.radius[0]..=spec.shapes.radius[1]),
    };
    let tint: Vec<f64> = (0..3)
        .map(|_| rng.random_range(-t.color_jitter..=t.color_jitter))
        .collect();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let stripes = t.stripes as f64;
    let res = spec.resolution;
    let noise: Vec<f64> = (0..res * res)
        .map(|_| rng.random_range(-t.noise_amplitude..=t.noise_amplitude))
        .collect();
    let img = ImageTensor::from_fn(res, res, 3, |y, x, c| {
        let (fy, fx) = (y as f64, x as f64);
        if disc.contains(fy, fx) {
            let dy = fy - disc.cy;
            let dx = fx - disc.cx;
            let rho = (dy * dy + dx * dx).sqrt() / disc.r;
            let theta = dy.atan2(dx);
            let shade = 1.0 - 0.35 * rho * rho;
            // Stripes fade out towards the centre, where they would converge.
            let fade = ((rho - 0.15) / 0.3).clamp(0.0, 1.0);
            let stripe = fade * t.stripe_amplitude * (stripes * theta + phase + 3.0 * rho).sin();
            ((t.base_color[c] + tint[c]) * shade + stripe + noise[y * res + x]).clamp(0.0, 1.0)
        } else {
            (t.background[c] + 0.5 * noise[y * res + x]).clamp(0.0, 1.0)
        }
    });
    Rendered {
        image: img,
        disc,
        noise,
    }
}

/// Point inside the disc at a random angle and radius fraction below `max_frac`.
fn point_in_disc(disc: &Disc, max_frac: f64, rng: &mut impl Rng) -> (f64, f64) {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let r = disc.r * max_frac * rng.random_range(0.0f64..=1.0).sqrt();
    (disc.cy + r * a.sin(), disc.cx + r * a.cos())
}

fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vy, vx) = (b.0 - a.0, b.1 - a.1);
    let (wy, wx) = (p.0 - a.0, p.1 - a.1);
    let len2 = vy * vy + vx * vx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wy * vy + wx * vx) / len2).clamp(0.0, 1.0)
    };
    let (qy, qx) = (a.0 + t * vy, a.1 + t * vx);
    ((p.0 - qy).powi(2) + (p.1 - qx).powi(2)).sqrt()
}

/// Applies one defect in place and returns its mask. Painted pixels keep the
/// rendering's sensor noise.
fn plant_defect(
    spec: &SyntheticSpec,
    target: &mut Rendered,
    kind: DefectKind,
    rng: &mut impl Rng,
) -> ImageTensor {
    let res = spec.resolution;
    let scale = res as f64 / 64.0;
    let disc = &target.disc;
    let noise = &target.noise;
    let image = &mut target.image;
    let mut mask = ImageTensor::zeros(res, res, 1);
    let mut paint = |y: usize, x: usize, color: &dyn Fn(usize, f64) -> f64, noise_gain: f64| {
        let n = noise_gain * noise[y * res + x];
        for c in 0..3 {
            let v = (color(c, image.get(y, x, c)) + n).clamp(0.0, 1.0);
            image.set(y, x, c, v);
        }
        mask.set(y, x, 0, 1.0);
    };
    match kind {
        DefectKind::Scratch => {
            let a = point_in_disc(disc, 0.8, rng);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let len = disc.r * rng.random_range(0.6..=1.0);
            let b = (a.0 + len * angle.sin(), a.1 + len * angle.cos());
            let half_width = 0.9 * scale;
            for y in 0..res {
                for x in 0..res {
                    let p = (y as f64, x as f64);
                    if disc.contains(p.0, p.1) && distance_to_segment(p, a, b) <= half_width {
                        paint(y, x, &|c, _| SCRATCH_COLOR[c], 1.0);
                    }
                }
            }
        }
        DefectKind::Blob => {
            let (cy, cx) = point_in_disc(disc, 0.6, rng);
            let ry = scale * rng.random_range(3.0..=6.0);
            let rx = scale * rng.random_range(3.0..=6.0);
            for y in 0..res {
                for x in 0..res {
                    let (fy, fx) = (y as f64, x as f64);
                    let e = ((fy - cy) / ry).powi(2) + ((fx - cx) / rx).powi(2);
                    if e <= 1.0 && disc.contains(fy, fx) {
                        // Stain: mostly replaces the shell colour, keeps some texture.
                        paint(y, x, &|c, old| 0.25 * old + 0.75 * STAIN_COLOR[c], 0.0);
                    }
                }
            }
        }
        DefectKind::MissingRegion => {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let cy = disc.cy + disc.r * a.sin();
            let cx = disc.cx + disc.r * a.cos();
            let r = scale * rng.random_range(6.0..=9.0);
            let bg = spec.textures.background;
            for y in 0..res {
                for x in 0..res {
                    let (fy, fx) = (y as f64, x as f64);
                    if disc.contains(fy, fx) && (fy - cy).powi(2) + (fx - cx).powi(2) <= r * r {
                        paint(y, x, &|c, _| bg[c], 0.5);
                    }
                }
            }
        }
    }
    mask
}

/// One rendered defect image with its kind and mask.
pub struct DefectSample {
    pub kind: DefectKind,
    pub image: ImageTensor,
    pub mask: ImageTensor,
}

/// Renders the full category in memory, in the same order the tree is written.
pub fn render_category(spec: &SyntheticSpec) -> Result<(Vec<ImageTensor>, Vec<ImageTensor>, Vec<DefectSample>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train: Vec<ImageTensor> = (0..spec.counts.train_good)
        .map(|_| render_good(spec, &mut rng).image)
        .collect();
    let test_good: Vec<ImageTensor> = (0..spec.counts.test_good)
        .map(|_| render_good(spec, &mut rng).image)
        .collect();
    let mut defects = Vec::with_capacity(spec.counts.defects);
    for i in 0..spec.counts.defects {
        let kind = spec.defects.kinds[i % spec.defects.kinds.len()];
        let mut rendered = render_good(spec, &mut rng);
        let mask = plant_defect(spec, &mut rendered, kind, &mut rng);
        defects.push(DefectSample {
            kind,
            image: rendered.image,
            mask,
        });
    }
    Ok((train, test_good, defects))
}

/// Writes `out_dir/<category>/{train,test,ground_truth}` and returns the
/// category directory. Existing files with the same names are overwritten.
pub fn make_synthetic_category(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let (train, test_good, defects) = render_category(spec)?;
    let root = out_dir.as_ref().join(&spec.category);
    for (i, img) in train.iter().enumerate() {
        write_image(root.join("train/good").join(format!("{i:03}.png")), img)?;
    }
    for (i, img) in test_good.iter().enumerate() {
        write_image(root.join("test/good").join(format!("{i:03}.png")), img)?;
    }
    let mut per_kind = std::collections::BTreeMap::<&str, usize>::new();
    for d in &defects {
        let name = d.kind.dir_name();
        let idx = per_kind.entry(name).or_insert(0);
        write_image(root.join("test").join(name).join(format!("{idx:03}.png")), &d.image)?;
        write_image(
            root.join("ground_truth").join(name).join(format!("{idx:03}_mask.png")),
            &d.mask,
        )?;
        *idx += 1;
    }
    std::fs::write(root.join("synthetic_spec.toml"), spec.to_toml())?;
    Ok(root)
}
