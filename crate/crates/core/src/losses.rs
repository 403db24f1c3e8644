//! The four training loss terms and their weighted total, plus the
//! pluggable perceptual feature extractor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{diff_x, diff_y, RgbImage, ScalarField};
use crate::tape::{Tape, VarId};

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const EQUAL3: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
const NORM_EPS: f64 = 1e-12;

/// Which constraint branches contribute to the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Full objective: discrete branch plus continuous residual.
    CoarseToFine,
    /// Discrete branch only (L_CR + λ2·L_CS), residual frozen.
    DdcOnly,
    /// Continuous branch only (L_FR + λ3·L_FS), density frozen.
    CdcOnly,
}

impl ConstraintMode {
    pub fn uses_ddc(self) -> bool {
        matches!(self, ConstraintMode::CoarseToFine | ConstraintMode::DdcOnly)
    }

    pub fn uses_cdc(self) -> bool {
        matches!(self, ConstraintMode::CoarseToFine | ConstraintMode::CdcOnly)
    }
}

impl std::fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintMode::CoarseToFine => "coarse-to-fine",
            ConstraintMode::DdcOnly => "ddc-only",
            ConstraintMode::CdcOnly => "cdc-only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse-to-fine" => Ok(ConstraintMode::CoarseToFine),
            "ddc-only" => Ok(ConstraintMode::DdcOnly),
            "cdc-only" => Ok(ConstraintMode::CdcOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta_c: f64,
    pub beta_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.0008,
            lambda3: 0.001,
            alpha1: 0.1,
            alpha2: 0.15,
            beta_c: 2.0,
            beta_f: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.alpha1,
            self.alpha2,
            self.beta_c,
            self.beta_f,
        ];
        if all.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if self.alpha2 > 1.0 {
            return Err(Error::InvalidConfig("alpha2 must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Deterministic, differentiable map from an image to feature fields at
/// one or more scales.
pub trait FeatureExtractor {
    fn features(&self, tape: &mut Tape, image: VarId) -> Vec<VarId>;
}

/// Default extractor: grayscale intensity plus first-order gradients over
/// a pyramid of 2× downsamplings. No learned weights.
#[derive(Debug, Clone, Copy)]
pub struct PyramidFeatures {
    pub levels: usize,
}

impl Default for PyramidFeatures {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

impl FeatureExtractor for PyramidFeatures {
    fn features(&self, tape: &mut Tape, image: VarId) -> Vec<VarId> {
        let mut out = Vec::new();
        let mut gray = tape.channel_weighted_sum(image, &LUMA);
        for level in 0..self.levels {
            out.push(gray);
            if tape.shape(gray).width >= 2 {
                out.push(tape.diff_x(gray).expect("width checked"));
            }
            if tape.shape(gray).height >= 2 {
                out.push(tape.diff_y(gray).expect("height checked"));
            }
            if level + 1 < self.levels {
                gray = tape.avg_pool2(gray);
            }
        }
        out
    }
}

fn check_same_image_shape(tape: &Tape, a: VarId, b: VarId) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::DimensionMismatch(
            "image shapes differ in loss".into(),
        ));
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
fn mean_l1(tape: &mut Tape, a: VarId, b: VarId) -> VarId {
    let diff = tape.sub(a, b);
    let mag = tape.abs(diff);
    tape.mean(mag)
}

/// Coarse reconstruction loss: mean L1 plus α1 times the summed RMS
/// distances between extractor features of the two images.
pub fn loss_coarse_reconstruction(
    tape: &mut Tape,
    i_r_hat: VarId,
    i_r: VarId,
    extractor: &dyn FeatureExtractor,
    alpha1: f64,
) -> Result<VarId> {
    check_same_image_shape(tape, i_r_hat, i_r)?;
    let l1 = mean_l1(tape, i_r_hat, i_r);
    if alpha1 == 0.0 {
        return Ok(l1);
    }
    let fa = extractor.features(tape, i_r_hat);
    let fb = extractor.features(tape, i_r);
    let mut terms = vec![(l1, 1.0)];
    for (a, b) in fa.into_iter().zip(fb) {
        let diff = tape.sub(a, b);
        let sq = tape.mul(diff, diff);
        let msq = tape.mean(sq);
        let rms = tape.sqrt_eps(msq, NORM_EPS);
        terms.push((rms, alpha1));
    }
    Ok(tape.weighted_sum(&terms))
}

/// Per-pixel SSIM index averaged over color channels, using 3×3 local
/// statistics and the standard stabilizers on the [0,1] range.
pub fn ssim(tape: &mut Tape, a: VarId, b: VarId) -> Result<VarId> {
    check_same_image_shape(tape, a, b)?;
    let mut per_channel = Vec::with_capacity(3);
    for ch in 0..3 {
        let ca = tape.channel(a, ch);
        let cb = tape.channel(b, ch);
        let mu_a = tape.box3_mean(ca);
        let mu_b = tape.box3_mean(cb);
        let aa = tape.mul(ca, ca);
        let bb = tape.mul(cb, cb);
        let ab = tape.mul(ca, cb);
        let m_aa = tape.box3_mean(aa);
        let m_bb = tape.box3_mean(bb);
        let m_ab = tape.box3_mean(ab);
        let mu_a2 = tape.mul(mu_a, mu_a);
        let mu_b2 = tape.mul(mu_b, mu_b);
        let mu_ab = tape.mul(mu_a, mu_b);
        let var_a = tape.sub(m_aa, mu_a2);
        let var_b = tape.sub(m_bb, mu_b2);
        let cov = tape.sub(m_ab, mu_ab);
        let two_mu = tape.scale(mu_ab, 2.0);
        let two_mu_c1 = tape.add_scalar(two_mu, SSIM_C1);
        let two_cov = tape.scale(cov, 2.0);
        let two_cov_c2 = tape.add_scalar(two_cov, SSIM_C2);
        let num = tape.mul(two_mu_c1, two_cov_c2);
        let mu_sum = tape.add(mu_a2, mu_b2);
        let mu_sum_c1 = tape.add_scalar(mu_sum, SSIM_C1);
        let var_sum = tape.add(var_a, var_b);
        let var_sum_c2 = tape.add_scalar(var_sum, SSIM_C2);
        let den = tape.mul(mu_sum_c1, var_sum_c2);
        let inv_den = tape.recip(den);
        per_channel.push(tape.mul(num, inv_den));
    }
    let s01 = tape.add(per_channel[0], per_channel[1]);
    let s = tape.add(s01, per_channel[2]);
    Ok(tape.scale(s, 1.0 / 3.0))
}

/// Fine reconstruction loss: masked mean of
/// α2·|Δ|₁ + (1−α2)·DSSIM, with DSSIM = (1 − SSIM)/2 so the term vanishes
/// at perfect reconstruction. Masks act as constants.
pub fn loss_fine_reconstruction(
    tape: &mut Tape,
    i_l_hat: VarId,
    i_l: VarId,
    m_occ: &ScalarField,
    m_edge: &ScalarField,
    alpha2: f64,
) -> Result<VarId> {
    check_same_image_shape(tape, i_l_hat, i_l)?;
    let mask: Vec<f64> = m_occ
        .data()
        .iter()
        .zip(m_edge.data())
        .map(|(&a, &b)| a * b)
        .collect();
    if mask.iter().all(|&m| m <= 0.0) {
        return Err(Error::AllMasked);
    }
    let diff = tape.sub(i_l_hat, i_l);
    let absdiff = tape.abs(diff);
    let l1 = tape.channel_weighted_sum(absdiff, &EQUAL3);
    let s = ssim(tape, i_l_hat, i_l)?;
    let neg_s = tape.scale(s, -0.5);
    let dssim = tape.add_scalar(neg_s, 0.5);
    let l1_w = tape.scale(l1, alpha2);
    let dssim_w = tape.scale(dssim, 1.0 - alpha2);
    let per_pixel = tape.add(l1_w, dssim_w);
    Ok(tape.masked_mean(per_pixel, &mask))
}

/// exp(−β·mean_ch|∂I|) edge weights from a constant image, one field per
/// direction.
pub fn edge_weights(image: &RgbImage, beta: f64) -> Result<(ScalarField, ScalarField)> {
    let mut gx = ScalarField::constant(image.width(), image.height(), 0.0);
    let mut gy = ScalarField::constant(image.width(), image.height(), 0.0);
    for ch in 0..3 {
        let c = image.channel(ch);
        let dx = diff_x(&c)?;
        let dy = diff_y(&c)?;
        for (g, d) in gx.data_mut().iter_mut().zip(dx.data()) {
            *g += d.abs() / 3.0;
        }
        for (g, d) in gy.data_mut().iter_mut().zip(dy.data()) {
            *g += d.abs() / 3.0;
        }
    }
    Ok((gx.map(|g| (-beta * g).exp()), gy.map(|g| (-beta * g).exp())))
}

/// Edge-aware smoothness of the coarse disparity (mean reduction).
pub fn loss_coarse_smooth(
    tape: &mut Tape,
    d_c: VarId,
    i_l: &RgbImage,
    beta_c: f64,
) -> Result<VarId> {
    let shape = tape.shape(d_c);
    if (shape.width, shape.height) != (i_l.width(), i_l.height()) {
        return Err(Error::DimensionMismatch(
            "disparity and image sizes differ".into(),
        ));
    }
    let (wx, wy) = edge_weights(i_l, beta_c)?;
    let dx = tape.diff_x(d_c)?;
    let dy = tape.diff_y(d_c)?;
    let ax = tape.abs(dx);
    let ay = tape.abs(dy);
    let ex = tape.mul_const(ax, wx.data().to_vec());
    let ey = tape.mul_const(ay, wy.data().to_vec());
    let per_pixel = tape.add(ex, ey);
    Ok(tape.mean(per_pixel))
}

/// Edge-aware smoothness of the fine disparity with the occlusion
/// emphasis weight W = 1 + (1 − M_occ⊙M_edge) ∈ [1, 2].
pub fn loss_fine_smooth(
    tape: &mut Tape,
    d_f: VarId,
    i_l: &RgbImage,
    m_occ: &ScalarField,
    m_edge: &ScalarField,
    beta_f: f64,
) -> Result<VarId> {
    let shape = tape.shape(d_f);
    if (shape.width, shape.height) != (i_l.width(), i_l.height()) {
        return Err(Error::DimensionMismatch(
            "disparity and image sizes differ".into(),
        ));
    }
    let (wx, wy) = edge_weights(i_l, beta_f)?;
    let emphasis: Vec<f64> = m_occ
        .data()
        .iter()
        .zip(m_edge.data())
        .map(|(&a, &b)| 2.0 - a * b)
        .collect();
    let dx = tape.diff_x(d_f)?;
    let dy = tape.diff_y(d_f)?;
    let ax = tape.abs(dx);
    let ay = tape.abs(dy);
    let ex = tape.mul_const(ax, wx.data().to_vec());
    let ey = tape.mul_const(ay, wy.data().to_vec());
    let sum = tape.add(ex, ey);
    let weighted = tape.mul_const(sum, emphasis);
    Ok(tape.mean(weighted))
}

/// The four scalar terms of the objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub coarse_reconstruction: VarId,
    pub fine_reconstruction: VarId,
    pub coarse_smooth: VarId,
    pub fine_smooth: VarId,
}

/// Weighted total; the mode drops the branch a constraint ablation turns
/// off. Errors on any contributing non-finite term.
pub fn total_loss(
    tape: &mut Tape,
    terms: LossTerms,
    weights: &LossWeights,
    mode: ConstraintMode,
) -> Result<VarId> {
    let mut active: Vec<(VarId, f64, &str)> = Vec::new();
    if mode.uses_ddc() {
        active.push((terms.coarse_reconstruction, 1.0, "L_CR"));
        active.push((terms.coarse_smooth, weights.lambda2, "L_CS"));
    }
    if mode.uses_cdc() {
        active.push((terms.fine_reconstruction, weights.lambda1, "L_FR"));
        active.push((terms.fine_smooth, weights.lambda3, "L_FS"));
    }
    for &(id, _, name) in &active {
        let v = tape.scalar_value(id);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: name.into(),
                value: v,
            });
        }
    }
    let terms: Vec<(VarId, f64)> = active.iter().map(|&(id, w, _)| (id, w)).collect();
    Ok(tape.weighted_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> RgbImage {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    data.push(f(x, y, ch));
                }
            }
        }
        RgbImage::new(w, h, data).unwrap()
    }

    fn scalar_const(tape: &mut Tape, v: f64) -> VarId {
        let f = ScalarField::constant(1, 1, v);
        tape.param_field(&f)
    }

    #[test]
    fn coarse_reconstruction_zero_on_identical() {
        let img = test_image(8, 6, |x, y, ch| ((x + y + ch) % 5) as f64 / 5.0);
        let mut tape = Tape::new();
        let a = tape.param_image(&img);
        let b = tape.constant_image(&img);
        let l = loss_coarse_reconstruction(&mut tape, a, b, &PyramidFeatures::default(), 0.1)
            .unwrap();
        assert!(tape.scalar_value(l).abs() < 1e-6);
    }

    #[test]
    fn coarse_reconstruction_uniform_offset() {
        let a_img = test_image(6, 4, |_, _, _| 0.5);
        let b_img = test_image(6, 4, |_, _, _| 0.4);
        let mut tape = Tape::new();
        let a = tape.param_image(&a_img);
        let b = tape.constant_image(&b_img);
        let l =
            loss_coarse_reconstruction(&mut tape, a, b, &PyramidFeatures::default(), 0.0).unwrap();
        assert!((tape.scalar_value(l) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let img = test_image(7, 5, |x, y, _| ((x * y) % 4) as f64 / 4.0);
        let mut tape = Tape::new();
        let a = tape.param_image(&img);
        let b = tape.constant_image(&img);
        let s = ssim(&mut tape, a, b).unwrap();
        assert!(tape.value(s).iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn ssim_symmetric() {
        let ia = test_image(6, 6, |x, y, ch| ((x + 2 * y + ch) % 7) as f64 / 7.0);
        let ib = test_image(6, 6, |x, y, ch| ((3 * x + y + ch) % 5) as f64 / 5.0);
        let mut tape = Tape::new();
        let a = tape.param_image(&ia);
        let b = tape.param_image(&ib);
        let sab = ssim(&mut tape, a, b).unwrap();
        let sba = ssim(&mut tape, b, a).unwrap();
        for (x, y) in tape.value(sab).iter().zip(tape.value(sba)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_negative_on_inverted_checkerboard() {
        let a = test_image(9, 9, |x, y, _| ((x + y) % 2) as f64);
        let b = test_image(9, 9, |x, y, _| 1.0 - ((x + y) % 2) as f64);
        let mut tape = Tape::new();
        let va = tape.param_image(&a);
        let vb = tape.constant_image(&b);
        let s = ssim(&mut tape, va, vb).unwrap();
        // interior windows are fully textured and anti-correlated
        let field = tape.value_as_field(s);
        assert!(field.get(4, 4) < 0.0);
    }

    #[test]
    fn fine_reconstruction_zero_on_identical() {
        let img = test_image(8, 6, |x, y, ch| ((x * 2 + y + ch) % 6) as f64 / 6.0);
        let ones = ScalarField::constant(8, 6, 1.0);
        let mut tape = Tape::new();
        let a = tape.param_image(&img);
        let b = tape.constant_image(&img);
        let l = loss_fine_reconstruction(&mut tape, a, b, &ones, &ones, 0.15).unwrap();
        assert!(tape.scalar_value(l).abs() < 1e-9);
    }

    #[test]
    fn fine_reconstruction_all_masked_errors() {
        let img = test_image(4, 4, |_, _, _| 0.5);
        let zeros = ScalarField::constant(4, 4, 0.0);
        let ones = ScalarField::constant(4, 4, 1.0);
        let mut tape = Tape::new();
        let a = tape.param_image(&img);
        let b = tape.constant_image(&img);
        assert!(matches!(
            loss_fine_reconstruction(&mut tape, a, b, &zeros, &ones, 0.15),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn fine_reconstruction_ignores_masked_pixels() {
        let il = test_image(6, 4, |x, y, ch| ((x + y + ch) % 4) as f64 / 4.0);
        let mut mask = ScalarField::constant(6, 4, 1.0);
        mask.set(2, 1, 0.0);
        mask.set(5, 3, 0.0);
        let ones = ScalarField::constant(6, 4, 1.0);

        let clean = il.clone();
        let mut corrupted = il.clone();
        corrupted.set(2, 1, 0, 1.0);
        corrupted.set(5, 3, 2, 0.0);

        let eval = |hat: &RgbImage| {
            let mut tape = Tape::new();
            let a = tape.param_image(hat);
            let b = tape.constant_image(&il);
            let l = loss_fine_reconstruction(&mut tape, a, b, &mask, &ones, 0.15).unwrap();
            tape.scalar_value(l)
        };
        // corruption bleeds into neighboring SSIM windows, so compare with
        // the L1-only form where masking is exactly local
        let eval_l1 = |hat: &RgbImage| {
            let mut tape = Tape::new();
            let a = tape.param_image(hat);
            let b = tape.constant_image(&il);
            let l = loss_fine_reconstruction(&mut tape, a, b, &mask, &ones, 1.0).unwrap();
            tape.scalar_value(l)
        };
        assert!((eval_l1(&clean) - eval_l1(&corrupted)).abs() < 1e-12);
        // and the masked pixels themselves contribute nothing either way
        assert!(eval(&clean).abs() < 1e-9);
    }

    #[test]
    fn coarse_smooth_zero_on_constant() {
        let img = test_image(6, 5, |x, y, _| ((x * y) % 3) as f64 / 3.0);
        let mut tape = Tape::new();
        let d = tape.param_field(&ScalarField::constant(6, 5, 14.0));
        let l = loss_coarse_smooth(&mut tape, d, &img, 2.0).unwrap();
        assert_eq!(tape.scalar_value(l), 0.0);
    }

    #[test]
    fn coarse_smooth_ramp_on_uniform_image() {
        let img = test_image(5, 4, |_, _, _| 0.5);
        let mut tape = Tape::new();
        let d = tape.param_field(&ScalarField::from_fn(5, 4, |x, _| 3.0 * x as f64));
        let l = loss_coarse_smooth(&mut tape, d, &img, 2.0).unwrap();
        // |∂x| = 3 on 4 of 5 columns, weights are e^0 = 1
        let expect = 3.0 * 4.0 / 5.0;
        assert!((tape.scalar_value(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn coarse_smooth_monotone_in_beta() {
        let img = test_image(8, 6, |x, y, _| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let d = ScalarField::from_fn(8, 6, |x, y| ((x * 2 + y) % 5) as f64);
        let eval = |beta: f64| {
            let mut tape = Tape::new();
            let v = tape.param_field(&d);
            let l = loss_coarse_smooth(&mut tape, v, &img, beta).unwrap();
            tape.scalar_value(l)
        };
        assert!(eval(4.0) <= eval(2.0));
        assert!(eval(2.0) <= eval(0.0));
    }

    #[test]
    fn fine_smooth_weight_doubles_when_masked() {
        let img = test_image(6, 4, |_, _, _| 0.5);
        let d = ScalarField::from_fn(6, 4, |x, _| x as f64);
        let ones = ScalarField::constant(6, 4, 1.0);
        let zeros = ScalarField::constant(6, 4, 0.0);
        let eval = |m_occ: &ScalarField| {
            let mut tape = Tape::new();
            let v = tape.param_field(&d);
            let l = loss_fine_smooth(&mut tape, v, &img, m_occ, &ones, 1.0).unwrap();
            tape.scalar_value(l)
        };
        let visible = eval(&ones);
        let occluded = eval(&zeros);
        assert!((occluded - 2.0 * visible).abs() < 1e-12);
    }

    #[test]
    fn fine_smooth_all_ones_matches_coarse_form() {
        let img = test_image(6, 4, |x, y, _| ((x + y) % 3) as f64 / 3.0);
        let d = ScalarField::from_fn(6, 4, |x, y| (x * y) as f64 * 0.3);
        let ones = ScalarField::constant(6, 4, 1.0);
        let mut tape = Tape::new();
        let v = tape.param_field(&d);
        let fine = loss_fine_smooth(&mut tape, v, &img, &ones, &ones, 1.5).unwrap();
        let coarse = loss_coarse_smooth(&mut tape, v, &img, 1.5).unwrap();
        assert!((tape.scalar_value(fine) - tape.scalar_value(coarse)).abs() < 1e-12);
    }

    #[test]
    fn fine_smooth_constant_disparity_is_zero() {
        let img = test_image(6, 4, |x, _, _| (x % 2) as f64);
        let masks = ScalarField::from_fn(6, 4, |x, _| (x % 2) as f64);
        let mut tape = Tape::new();
        let v = tape.param_field(&ScalarField::constant(6, 4, 9.0));
        let l = loss_fine_smooth(&mut tape, v, &img, &masks, &masks, 1.0).unwrap();
        assert_eq!(tape.scalar_value(l), 0.0);
    }

    #[test]
    fn total_loss_default_weights() {
        let mut tape = Tape::new();
        let terms = LossTerms {
            coarse_reconstruction: scalar_const(&mut tape, 1.0),
            fine_reconstruction: scalar_const(&mut tape, 1.0),
            coarse_smooth: scalar_const(&mut tape, 1.0),
            fine_smooth: scalar_const(&mut tape, 1.0),
        };
        let total = total_loss(
            &mut tape,
            terms,
            &LossWeights::default(),
            ConstraintMode::CoarseToFine,
        )
        .unwrap();
        assert!((tape.scalar_value(total) - 2.0018).abs() < 1e-12);
    }

    #[test]
    fn ddc_only_ignores_cdc_terms() {
        let mut tape = Tape::new();
        let terms = LossTerms {
            coarse_reconstruction: scalar_const(&mut tape, 1.0),
            fine_reconstruction: scalar_const(&mut tape, f64::NAN),
            coarse_smooth: scalar_const(&mut tape, 1.0),
            fine_smooth: scalar_const(&mut tape, f64::NAN),
        };
        let total = total_loss(
            &mut tape,
            terms,
            &LossWeights::default(),
            ConstraintMode::DdcOnly,
        )
        .unwrap();
        assert!((tape.scalar_value(total) - 1.0008).abs() < 1e-12);
    }

    #[test]
    fn non_finite_term_is_rejected() {
        let mut tape = Tape::new();
        let terms = LossTerms {
            coarse_reconstruction: scalar_const(&mut tape, f64::INFINITY),
            fine_reconstruction: scalar_const(&mut tape, 0.0),
            coarse_smooth: scalar_const(&mut tape, 0.0),
            fine_smooth: scalar_const(&mut tape, 0.0),
        };
        assert!(matches!(
            total_loss(
                &mut tape,
                terms,
                &LossWeights::default(),
                ConstraintMode::CoarseToFine
            ),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
