//! MVTec-style dataset trees, scenario subsetting, augmentation and image I/O.
//!
//! Layout: `category/train/good/*`, `category/test/<type>/*` and
//! `category/ground_truth/<type>/<stem>_mask.*`. Test type `good` is normal.

pub mod augment;
pub mod io;
pub mod synth;

pub use augment::{augment, AppliedOp, AugmentRecord, AugmentedSet, Strategy};
pub use io::{read_image, read_mask, write_image};
pub use synth::{make_synthetic_category, SyntheticSpec};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEntry {
    pub path: PathBuf,
    pub defect_type: String,
    pub label: Label,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub category: String,
    pub root: PathBuf,
    pub train_good: Vec<PathBuf>,
    pub test: Vec<TestEntry>,
}

impl DatasetIndex {
    pub fn mask_count(&self) -> usize {
        self.test.iter().filter(|t| t.mask.is_some()).count()
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| is_image(p))
        .collect();
    out.sort();
    Ok(out)
}

/// Sorted PNG files directly under `dir`; errors when there are none.
pub fn image_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::LayoutViolation(format!("{} is not a directory", dir.display())));
    }
    let files = sorted_images(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyImageSet);
    }
    Ok(files)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    let want = format!("{stem}_mask");
    std::fs::read_dir(gt_dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .filter(|p| p.file_stem().and_then(|s| s.to_str()) == Some(want.as_str()))
        .min()
}

pub fn load_dataset(root: impl AsRef<Path>, category: &str) -> Result<DatasetIndex> {
    let base = root.as_ref().join(category);
    let good_dir = base.join("train").join("good");
    if !good_dir.is_dir() {
        return Err(Error::LayoutViolation(format!(
            "missing directory {}",
            good_dir.display()
        )));
    }
    let train_good = sorted_images(&good_dir)?;
    if train_good.is_empty() {
        return Err(Error::LayoutViolation(format!(
            "{} has no images",
            good_dir.display()
        )));
    }
    let test_dir = base.join("test");
    let mut test = Vec::new();
    if test_dir.is_dir() {
        for type_dir in sorted_dirs(&test_dir)? {
            let defect_type = type_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let normal = defect_type == "good";
            for path in sorted_images(&type_dir)? {
                let mask = if normal {
                    None
                } else {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    let gt = base.join("ground_truth").join(&defect_type);
                    Some(find_mask(&gt, stem).ok_or_else(|| Error::MaskMissing(path.clone()))?)
                };
                test.push(TestEntry {
                    path,
                    defect_type: defect_type.clone(),
                    label: if normal { Label::Normal } else { Label::Anomalous },
                    mask,
                });
            }
        }
    }
    Ok(DatasetIndex {
        category: category.to_string(),
        root: base,
        train_good,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    OneShot,
    FewShot,
    FullShot,
}

impl ScenarioKind {
    pub const FEW_SHOT_COUNT: usize = 5;

    /// `None` means all available images.
    pub fn shot_count(self) -> Option<usize> {
        match self {
            ScenarioKind::OneShot => Some(1),
            ScenarioKind::FewShot => Some(Self::FEW_SHOT_COUNT),
            ScenarioKind::FullShot => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::OneShot => "one_shot",
            ScenarioKind::FewShot => "few_shot",
            ScenarioKind::FullShot => "full_shot",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_shot" => Ok(Self::OneShot),
            "few_shot" => Ok(Self::FewShot),
            "full_shot" => Ok(Self::FullShot),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// The chosen training originals, by position in `train_good`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSelection {
    pub kind: ScenarioKind,
    pub indices: Vec<usize>,
    pub paths: Vec<PathBuf>,
}

/// Seeded subset of the good training images, returned in sorted order.
pub fn select_scenario(
    index: &DatasetIndex,
    kind: ScenarioKind,
    rng: &mut impl Rng,
) -> Result<ScenarioSelection> {
    let available = index.train_good.len();
    if available == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let mut indices: Vec<usize> = match kind.shot_count() {
        None => (0..available).collect(),
        Some(n) if n > available => {
            return Err(Error::InsufficientImages {
                needed: n,
                available,
            })
        }
        Some(n) => sample(rng, available, n).into_vec(),
    };
    indices.sort_unstable();
    let paths = indices.iter().map(|&i| index.train_good[i].clone()).collect();
    Ok(ScenarioSelection {
        kind,
        indices,
        paths,
    })
}

/// Reads images and resizes them to `resolution` (bilinear).
pub fn load_images(paths: &[PathBuf], resolution: usize) -> Result<Vec<ImageTensor>> {
    paths
        .iter()
        .map(|p| Ok(read_image(p)?.resize(resolution, resolution)))
        .collect()
}

/// Reads a mask, resizes it and re-binarizes at 0.5.
pub fn load_mask(path: &Path, resolution: usize) -> Result<ImageTensor> {
    let m = read_mask(path)?.resize(resolution, resolution);
    let (h, w, _) = m.shape();
    Ok(ImageTensor::from_fn(h, w, 1, |y, x, _| {
        if m.get(y, x, 0) >= 0.5 {
            1.0
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(with_mask: bool) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("widget");
        let img = ImageTensor::filled(8, 8, 3, 0.5);
        write_image(c.join("train/good/000.png"), &img).unwrap();
        write_image(c.join("train/good/001.png"), &img).unwrap();
        write_image(c.join("test/good/000.png"), &img).unwrap();
        write_image(c.join("test/crack/000.png"), &img).unwrap();
        if with_mask {
            write_image(
                c.join("ground_truth/crack/000_mask.png"),
                &ImageTensor::filled(8, 8, 1, 1.0),
            )
            .unwrap();
        }
        dir
    }

    #[test]
    fn loads_fixture_tree() {
        let dir = fixture(true);
        let idx = load_dataset(dir.path(), "widget").unwrap();
        assert_eq!((idx.train_good.len(), idx.test.len(), idx.mask_count()), (2, 2, 1));
        assert_eq!(idx, load_dataset(dir.path(), "widget").unwrap());
        let crack = idx.test.iter().find(|t| t.defect_type == "crack").unwrap();
        assert_eq!(crack.label, Label::Anomalous);
    }

    #[test]
    fn missing_mask_names_the_image() {
        let dir = fixture(false);
        match load_dataset(dir.path(), "widget") {
            Err(Error::MaskMissing(p)) => assert!(p.ends_with("test/crack/000.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_good_dir_is_layout_violation() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path(), "nothing"),
            Err(Error::LayoutViolation(_))
        ));
    }

    fn index_with(n: usize) -> DatasetIndex {
        DatasetIndex {
            category: "x".into(),
            root: PathBuf::from("/x"),
            train_good: (0..n).map(|i| PathBuf::from(format!("/x/{i:03}.png"))).collect(),
            test: Vec::new(),
        }
    }

    #[test]
    fn scenario_counts_and_determinism() {
        let idx = index_with(10);
        let a = select_scenario(&idx, ScenarioKind::OneShot, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = select_scenario(&idx, ScenarioKind::OneShot, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.paths.len(), 1);
        let few = select_scenario(&idx, ScenarioKind::FewShot, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(few.indices.len(), 5);
        assert!(few.indices.windows(2).all(|w| w[0] < w[1]));
        let full = select_scenario(&idx, ScenarioKind::FullShot, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(full.paths, idx.train_good);
        assert!(matches!(
            select_scenario(&index_with(3), ScenarioKind::FewShot, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientImages { needed: 5, available: 3 })
        ));
    }
}
