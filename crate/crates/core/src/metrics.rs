//! Depth evaluation metrics, median scaling and flip-average
//! post-processing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Floor applied to predictions before log metrics.
const PRED_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Depth cap in meters (80 KITTI-style, 70 Make3D-style).
    pub cap: f64,
    pub crop: Option<CropRect>,
    pub median_scaling: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cap: 80.0,
            crop: None,
            median_scaling: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.cap <= 0.0 {
            return Err(Error::InvalidConfig("depth cap must be positive".into()));
        }
        if let Some(c) = &self.crop {
            if c.x0 >= c.x1 || c.y0 >= c.y1 || c.x1 > width || c.y1 > height {
                return Err(Error::InvalidConfig("crop outside image bounds".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log_rmse: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub log10: f64,
    pub valid_pixels: usize,
}

fn valid_mask(gt: &ScalarField, config: &EvalConfig) -> Vec<bool> {
    let (w, h) = (gt.width(), gt.height());
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let in_crop = config
                .crop
                .map(|c| x >= c.x0 && x < c.x1 && y >= c.y0 && y < c.y1)
                .unwrap_or(true);
            let g = gt.get(x, y);
            mask[y * w + x] = in_crop && g > 0.0 && g <= config.cap;
        }
    }
    mask
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rescale predictions by median(gt)/median(pred) over the valid pixels.
pub fn median_scale(pred: &ScalarField, gt: &ScalarField, validity: &[bool]) -> Result<ScalarField> {
    let mut pv: Vec<f64> = Vec::new();
    let mut gv: Vec<f64> = Vec::new();
    for (i, &ok) in validity.iter().enumerate() {
        if ok {
            pv.push(pred.data()[i]);
            gv.push(gt.data()[i]);
        }
    }
    if pv.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mp = median(&mut pv);
    let mg = median(&mut gv);
    if mp == 0.0 {
        return Err(Error::ZeroMedian);
    }
    Ok(pred.map(|v| v * mg / mp))
}

/// Metrics over valid pixels (gt > 0, within crop, ≤ cap); predictions are
/// clamped into (0, cap] first. Thresholds use 1.25, 1.25², 1.25³.
pub fn evaluate(pred: &ScalarField, gt: &ScalarField, config: &EvalConfig) -> Result<MetricReport> {
    if !pred.same_size(gt) {
        return Err(Error::DimensionMismatch(
            "prediction and ground truth sizes differ".into(),
        ));
    }
    config.validate(gt.width(), gt.height())?;
    let validity = valid_mask(gt, config);
    let pred = if config.median_scaling {
        median_scale(pred, gt, &validity)?
    } else {
        pred.clone()
    };

    let mut n = 0usize;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut log_sq = 0.0;
    let mut log10_sq = 0.0;
    let mut a = [0usize; 3];
    for (i, &ok) in validity.iter().enumerate() {
        if !ok {
            continue;
        }
        let g = gt.data()[i];
        let p = pred.data()[i].clamp(PRED_FLOOR, config.cap);
        let diff = (p - g).abs();
        abs_rel += diff / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        log_sq += (p.ln() - g.ln()).powi(2);
        log10_sq += (p.log10() - g.log10()).powi(2);
        let ratio = (p / g).max(g / p);
        for (j, slot) in a.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(j as i32 + 1) {
                *slot += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let nf = n as f64;
    Ok(MetricReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        log_rmse: (log_sq / nf).sqrt(),
        a1: a[0] as f64 / nf,
        a2: a[1] as f64 / nf,
        a3: a[2] as f64 / nf,
        log10: (log10_sq / nf).sqrt(),
        valid_pixels: n,
    })
}

/// Flip averaging: 0.5·(D₁ + flip(D₂)), where D₂ was predicted on the
/// horizontally flipped image.
pub fn post_process(
    depth_of_image: &ScalarField,
    depth_of_flipped_image: &ScalarField,
) -> Result<ScalarField> {
    if !depth_of_image.same_size(depth_of_flipped_image) {
        return Err(Error::DimensionMismatch(
            "post-process inputs differ in size".into(),
        ));
    }
    let flipped = depth_of_flipped_image.flip_horizontal();
    Ok(ScalarField::from_fn(
        depth_of_image.width(),
        depth_of_image.height(),
        |x, y| 0.5 * (depth_of_image.get(x, y) + flipped.get(x, y)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ScalarField {
        ScalarField::from_fn(w, h, f)
    }

    #[test]
    fn exact_prediction_is_perfect() {
        let gt = field(8, 6, |x, y| 5.0 + (x + y) as f64);
        let r = evaluate(&gt, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(r.abs_rel, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.log_rmse, 0.0);
        assert_eq!((r.a1, r.a2, r.a3), (1.0, 1.0, 1.0));
        assert_eq!(r.valid_pixels, 48);
    }

    #[test]
    fn uniform_ratio_1_3() {
        let gt = field(10, 10, |x, y| 4.0 + ((x * y) % 7) as f64);
        let pred = gt.map(|v| 1.3 * v);
        let r = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        assert!((r.abs_rel - 0.3).abs() < 1e-12);
        assert_eq!(r.a1, 0.0);
        assert_eq!(r.a2, 1.0);
        assert_eq!(r.a3, 1.0);
    }

    #[test]
    fn thresholds_are_monotone() {
        let gt = field(6, 6, |x, y| 2.0 + (x * 3 + y) as f64);
        let pred = gt.map(|v| v * 1.1 + 1.5);
        let r = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        assert!(r.a1 <= r.a2 && r.a2 <= r.a3);
    }

    #[test]
    fn cap_excludes_far_ground_truth() {
        let gt = field(4, 1, |x, _| if x == 0 { 100.0 } else { 10.0 });
        let pred = ScalarField::constant(4, 1, 10.0);
        let r = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(r.valid_pixels, 3);
        assert_eq!(r.abs_rel, 0.0);
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        let gt = ScalarField::constant(3, 3, 0.0);
        let pred = ScalarField::constant(3, 3, 5.0);
        assert!(matches!(
            evaluate(&pred, &gt, &EvalConfig::default()),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn median_scale_recovers_uniform_factor() {
        let gt = field(5, 4, |x, y| 3.0 + (x + 2 * y) as f64);
        let pred = gt.map(|v| 2.0 * v);
        let cfg = EvalConfig {
            median_scaling: true,
            ..EvalConfig::default()
        };
        let r = evaluate(&pred, &gt, &cfg).unwrap();
        assert!(r.abs_rel < 1e-12);
        assert_eq!(r.a1, 1.0);
    }

    #[test]
    fn median_scale_factor_is_scale_invariant() {
        let gt = field(5, 4, |x, y| 3.0 + (x + 2 * y) as f64);
        let pred = gt.map(|v| 0.7 * v + 0.1);
        let validity = vec![true; 20];
        let a = median_scale(&pred, &gt, &validity).unwrap();
        let b = median_scale(&pred.map(|v| 10.0 * v), &gt, &validity).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_restricts_evaluation() {
        let gt = field(8, 8, |_, _| 10.0);
        let mut pred = gt.clone();
        pred.set(0, 0, 50.0); // outside the crop
        let cfg = EvalConfig {
            crop: Some(CropRect {
                x0: 2,
                y0: 2,
                x1: 6,
                y1: 6,
            }),
            ..EvalConfig::default()
        };
        let r = evaluate(&pred, &gt, &cfg).unwrap();
        assert_eq!(r.valid_pixels, 16);
        assert_eq!(r.abs_rel, 0.0);
    }

    #[test]
    fn post_process_identities() {
        let d = field(6, 3, |x, y| (x * 2 + y) as f64 + 1.0);
        // D1 = flip(D2) -> output = D1
        let out = post_process(&d, &d.flip_horizontal()).unwrap();
        assert_eq!(out.data(), d.data());

        let a = ScalarField::constant(4, 2, 10.0);
        let b = ScalarField::constant(4, 2, 12.0);
        let out = post_process(&a, &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 11.0));
    }
}
