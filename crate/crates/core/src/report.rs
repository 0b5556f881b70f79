//! CSV reports derived from a finished run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::detector::EvalReport;
use crate::error::{Error, Result};
use crate::integrator::{RunManifest, MANIFEST_FILE};
use crate::pipeline::{read_json, QualityReport, EVAL_AUGMENTED_FILE, EVAL_BASELINE_FILE, QUALITY_FILE};

pub const REPORT_DIR: &str = "report";
pub const SCORES_CSV: &str = "scores.csv";
pub const QUALITY_CSV: &str = "quality.csv";
pub const AUROC_CSV: &str = "auroc.csv";

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::RunNotFound(path))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn scores_csv(manifest: &RunManifest) -> String {
    let mut out = String::from("round,loss,score,best\n");
    for r in &manifest.rounds {
        let best = manifest.alpha == Some(r.round);
        let _ = writeln!(out, "{},{},{},{}", r.round, num(r.loss), num(r.score), best as u8);
    }
    out
}

pub fn quality_csv(quality: &QualityReport) -> String {
    let mut out = String::from("set,ssim,psnr_db\n");
    for row in &quality.rows {
        let psnr = row.psnr_db.map(num).unwrap_or_else(|| "inf".into());
        let _ = writeln!(out, "{},{},{}", row.label, num(row.ssim), psnr);
    }
    out
}

pub fn auroc_csv(baseline: &EvalReport, augmented: &EvalReport) -> String {
    let mut out = String::from("bank,scenario,detection_auroc,segmentation_auroc,bank_size,bank_generated\n");
    for (name, r) in [("baseline", baseline), ("augmented", augmented)] {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{}",
            r.scenario.as_str(),
            num(r.detection_auroc),
            num(r.segmentation_auroc),
            r.bank_size,
            r.bank_generated
        );
    }
    let _ = writeln!(
        out,
        "delta,{},{},{},,",
        augmented.scenario.as_str(),
        num(augmented.detection_auroc - baseline.detection_auroc),
        num(augmented.segmentation_auroc - baseline.segmentation_auroc)
    );
    out
}

pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub quality: QualityReport,
    pub baseline: EvalReport,
    pub augmented: EvalReport,
}

pub fn load_run(run_dir: &Path) -> Result<RunArtifacts> {
    let manifest_path = require(run_dir.join(MANIFEST_FILE))?;
    Ok(RunArtifacts {
        manifest: RunManifest::read(manifest_path)?,
        quality: read_json(&require(run_dir.join(QUALITY_FILE))?)?,
        baseline: read_json(&require(run_dir.join(EVAL_BASELINE_FILE))?)?,
        augmented: read_json(&require(run_dir.join(EVAL_AUGMENTED_FILE))?)?,
    })
}

/// Writes the score curve, quality table and AUROC summary under `report/`.
pub fn write_reports(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let run = load_run(run_dir)?;
    let dir = run_dir.join(REPORT_DIR);
    let files = [
        (SCORES_CSV, scores_csv(&run.manifest)),
        (QUALITY_CSV, quality_csv(&run.quality)),
        (AUROC_CSV, auroc_csv(&run.baseline, &run.augmented)),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// Side-by-side AUROCs of two runs with `b - a` deltas.
pub fn comparison_csv(a: &RunArtifacts, b: &RunArtifacts) -> String {
    let mut out = String::from("metric,run_a,run_b,delta\n");
    let rows = [
        ("baseline.detection_auroc", a.baseline.detection_auroc, b.baseline.detection_auroc),
        ("baseline.segmentation_auroc", a.baseline.segmentation_auroc, b.baseline.segmentation_auroc),
        ("augmented.detection_auroc", a.augmented.detection_auroc, b.augmented.detection_auroc),
        ("augmented.segmentation_auroc", a.augmented.segmentation_auroc, b.augmented.segmentation_auroc),
    ];
    for (name, x, y) in rows {
        let _ = writeln!(out, "{name},{},{},{}", num(x), num(y), num(y - x));
    }
    let _ = writeln!(out, "run_id,{},{},", a.manifest.run_id, b.manifest.run_id);
    out
}

pub fn write_comparison(run_a: &Path, run_b: &Path, out: &Path) -> Result<PathBuf> {
    let text = comparison_csv(&load_run(run_a)?, &load_run(run_b)?);
    write(out, &text)?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_run_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        match write_reports(&dir.path().join("nope")) {
            Err(Error::RunNotFound(p)) => assert!(p.ends_with(MANIFEST_FILE)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
