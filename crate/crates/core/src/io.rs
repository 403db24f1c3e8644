//! On-disk formats: 16-bit depth PNGs (value = depth * 256 m), offset
//! encoded 16-bit residual PNGs, 8-bit masks and images, loss-trace CSV,
//! and JSON run summaries.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::{RgbImage, ScalarField};
use crate::metrics::MetricReport;
use crate::optimize::{LossRow, RunReport};
use crate::synth::SyntheticScene;

pub const DEPTH_SCALE: f64 = 256.0;

pub fn write_image_png8(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let buf = ImageBuffer::from_fn(w, h, |x, y| {
        let px = |c| {
            (img.get(x as usize, y as usize, c) * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).map_err(|e| Error::image(path, e))
}

pub fn read_image_png8(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for px in img.pixels() {
        for c in 0..3 {
            data.push(px.0[c] as f64 / 255.0);
        }
    }
    RgbImage::new(w, h, data)
}

/// Depth in meters to 16-bit grayscale, value = round(depth * 256).
pub fn write_depth_png16(path: &Path, depth: &ScalarField) -> Result<()> {
    let (w, h) = (depth.width() as u32, depth.height() as u32);
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
        let v = (depth.get(x as usize, y as usize) * DEPTH_SCALE)
            .round()
            .clamp(0.0, 65535.0) as u16;
        Luma([v])
    });
    buf.save(path).map_err(|e| Error::image(path, e))
}

pub fn read_depth_png16(path: &Path) -> Result<ScalarField> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / DEPTH_SCALE).collect();
    ScalarField::new(w, h, data)
}

/// Signed residual in [-w/2, w/2] to 16-bit grayscale with the zero point
/// at 32768 (value = round((r + 0.5 w) / w * 65535)).
pub fn write_residual_png16(path: &Path, residual: &ScalarField, width_m: f64) -> Result<()> {
    let (w, h) = (residual.width() as u32, residual.height() as u32);
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
        let r = residual.get(x as usize, y as usize);
        let v = ((r + 0.5 * width_m) / width_m * 65535.0)
            .round()
            .clamp(0.0, 65535.0) as u16;
        Luma([v])
    });
    buf.save(path).map_err(|e| Error::image(path, e))
}

pub fn read_residual_png16(path: &Path, width_m: f64) -> Result<ScalarField> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = img
        .pixels()
        .map(|p| (p.0[0] as f64 / 65535.0 - 0.5) * width_m)
        .collect();
    ScalarField::new(w, h, data)
}

/// [0,1] mask to 8-bit grayscale.
pub fn write_mask_png8(path: &Path, mask: &ScalarField) -> Result<()> {
    let (w, h) = (mask.width() as u32, mask.height() as u32);
    let buf = GrayImage::from_fn(w, h, |x, y| {
        let v = (mask.get(x as usize, y as usize) * 255.0)
            .round()
            .clamp(0.0, 255.0) as u8;
        Luma([v])
    });
    buf.save(path).map_err(|e| Error::image(path, e))
}

pub fn read_mask_png8(path: &Path) -> Result<ScalarField> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    ScalarField::new(w, h, data)
}

pub const LOSS_CSV_HEADER: &str = "iter,L_CR,L_FR,L_CS,L_FS,total";

pub fn write_loss_csv(path: &Path, trace: &[LossRow]) -> Result<()> {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for row in trace {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            row.iter,
            row.coarse_reconstruction,
            row.fine_reconstruction,
            row.coarse_smooth,
            row.fine_smooth,
            row.total
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const METRICS_CSV_HEADER: &str =
    "abs_rel,sq_rel,rmse,log_rmse,log10,a1,a2,a3,valid_pixels";

/// Append one metrics row, writing the header when creating the file.
pub fn append_metrics_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str(METRICS_CSV_HEADER);
        out.push('\n');
    }
    out.push_str(&format!(
        "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
        report.abs_rel,
        report.sq_rel,
        report.rmse,
        report.log_rmse,
        report.log10,
        report.a1,
        report.a2,
        report.a3,
        report.valid_pixels
    ));
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub iterations: usize,
    pub duration_seconds: f64,
    pub final_total_loss: f64,
    /// Residual encoding: value = round((r + 0.5 w) / w * 65535), zero
    /// point 32768 on this width.
    pub residual_width_m: f64,
    pub depth_scale: f64,
}

pub fn write_summary_json(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write a synthetic scene directory: images, ground truth, and the
/// config echo. Content lands in a temp directory first and is renamed
/// into place, so a failed write leaves no partial directory.
pub fn write_scene_dir(dir: &Path, scene: &SyntheticScene, config: &RunConfig) -> Result<()> {
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    ensure_dir(parent)?;
    let staging: PathBuf = parent.join(format!(
        ".{}.tmp",
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    ensure_dir(&staging)?;
    write_image_png8(&staging.join("left.png"), &scene.left)?;
    write_image_png8(&staging.join("right.png"), &scene.right)?;
    write_depth_png16(&staging.join("gt_depth.png"), &scene.gt_depth)?;
    write_mask_png8(&staging.join("gt_occlusion.png"), &scene.gt_occlusion)?;
    fs::write(staging.join("config.toml"), config.to_toml()?)
        .map_err(|e| Error::io(&staging.join("config.toml"), e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

/// Read a scene directory back. Ground-truth disparity is recomputed
/// from depth and the rig in the echoed config.
pub fn read_scene_dir(dir: &Path) -> Result<(SyntheticScene, RunConfig)> {
    let config = RunConfig::load(&dir.join("config.toml"))?;
    let left = read_image_png8(&dir.join("left.png"))?;
    let right = read_image_png8(&dir.join("right.png"))?;
    let gt_depth = read_depth_png16(&dir.join("gt_depth.png"))?;
    let gt_occlusion = read_mask_png8(&dir.join("gt_occlusion.png"))?;
    let rig = config.scene.rig;
    let bf = rig.bf();
    let gt_disparity = gt_depth.map(|d| if d > 0.0 { bf / d } else { 0.0 });
    Ok((
        SyntheticScene {
            left,
            right,
            gt_depth,
            gt_disparity,
            gt_occlusion,
            rig,
            seed: config.scene.seed,
        },
        config,
    ))
}

/// Write a full optimization run directory.
pub fn write_run_dir(dir: &Path, report: &RunReport, config: &RunConfig) -> Result<()> {
    ensure_dir(dir)?;
    write_loss_csv(&dir.join("loss.csv"), &report.trace)?;
    let out = &report.final_output;
    write_depth_png16(&dir.join("coarse_depth.png"), &out.coarse_depth)?;
    write_depth_png16(&dir.join("fine_depth.png"), &out.fine_depth)?;
    write_residual_png16(
        &dir.join("residual.png"),
        &out.residual_depth,
        report.config.residual_width,
    )?;
    let masks = &report.final_masks;
    write_mask_png8(&dir.join("mask_volume.png"), &masks.volume)?;
    write_mask_png8(&dir.join("mask_disparity.png"), &masks.disparity)?;
    write_mask_png8(&dir.join("mask_occlusion.png"), &masks.occlusion)?;
    write_mask_png8(&dir.join("mask_edge.png"), &masks.edge)?;
    let summary = RunSummary {
        mode: report.config.mode.to_string(),
        iterations: report.config.iterations,
        duration_seconds: report.duration.as_secs_f64(),
        final_total_loss: report.trace.last().map(|r| r.total).unwrap_or(f64::NAN),
        residual_width_m: report.config.residual_width,
        depth_scale: DEPTH_SCALE,
    };
    write_summary_json(&dir.join("summary.json"), &summary)?;
    fs::write(dir.join("config.toml"), config.to_toml()?)
        .map_err(|e| Error::io(&dir.join("config.toml"), e))
}
