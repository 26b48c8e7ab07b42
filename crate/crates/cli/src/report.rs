//! CSV report emission and parsing.
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so files are
//! byte-deterministic and parse back to identical values; infinite PSNR
//! renders as `inf`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mnd_core::metrics::{ImageRecord, IqaReport};

pub const PER_IMAGE_HEADER: &str =
    "method,image_id,psnr,ssim,success,iterations,deviation_pixel_ratio";
pub const AGGREGATE_HEADER: &str = "method,attempts,successes,success_rate,mean_psnr,std_psnr,\
mean_ssim,std_ssim,mean_iterations,mean_deviation_ratio,excluded_infinite_psnr";

pub fn write_per_image_csv(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let mut text = String::from(PER_IMAGE_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method, r.image_id, r.psnr, r.ssim, r.success, r.iterations, r.deviation_ratio
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_per_image_csv(path: &Path) -> Result<Vec<ImageRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == PER_IMAGE_HEADER => {}
        other => bail!("unexpected per-image CSV header: {other:?}"),
    }
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("line {}: expected 7 fields, got {}", n + 2, fields.len());
        }
        records.push(ImageRecord {
            method: fields[0].to_string(),
            image_id: fields[1].parse().with_context(|| format!("line {}", n + 2))?,
            psnr: fields[2].parse().with_context(|| format!("line {}", n + 2))?,
            ssim: fields[3].parse().with_context(|| format!("line {}", n + 2))?,
            success: fields[4].parse().with_context(|| format!("line {}", n + 2))?,
            iterations: fields[5].parse().with_context(|| format!("line {}", n + 2))?,
            deviation_ratio: fields[6].parse().with_context(|| format!("line {}", n + 2))?,
        });
    }
    Ok(records)
}

pub fn aggregate_csv_text(report: &IqaReport) -> String {
    let mut text = String::from(AGGREGATE_HEADER);
    text.push('\n');
    for m in &report.methods {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            m.method,
            m.attempts,
            m.successes,
            m.success_rate,
            m.mean_psnr,
            m.std_psnr,
            m.mean_ssim,
            m.std_ssim,
            m.mean_iterations,
            m.mean_deviation_ratio,
            m.excluded_infinite_psnr
        ));
    }
    text
}

pub fn write_aggregate_csv(path: &Path, report: &IqaReport) -> Result<()> {
    fs::write(path, aggregate_csv_text(report))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_train_report_csv(path: &Path, report: &mnd_core::classifier::TrainReport) -> Result<()> {
    let mut text = String::from("epoch,mean_loss,accuracy\n");
    for e in &report.epochs {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.accuracy));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
