//! Image reconstruction: the discrete path synthesizes the right image
//! from the density volume, the continuous path warps the right image back
//! into the left view through the fine depth map.

use crate::error::{Error, Result};
use crate::field::{RgbImage, ScalarField};
use crate::geometry::{convert_disparity_depth, warp_coords_t1, CameraRig, DisparityLadder};
use crate::tape::{Tape, VarId};

/// Shift channel n of the density volume by +d_n (T2 direction), producing
/// the right-view density volume.
pub fn shift_density_volume(
    tape: &mut Tape,
    density: VarId,
    ladder: &DisparityLadder,
) -> Result<VarId> {
    let channels = tape.shape(density).channels;
    if channels != ladder.len() {
        return Err(Error::ChannelMismatch {
            expected: ladder.len(),
            got: channels,
        });
    }
    Ok(tape.shift_channels(density, ladder.levels()))
}

/// Left image shifted by +d_n, flattened for the weighted sum.
fn shifted_image_buffer(image: &RgbImage, shift: f64) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out[(y * w + x) * 3 + ch] = crate::field::bilinear_sample_raw(
                    image.data(),
                    w,
                    h,
                    3,
                    ch,
                    x as f64 + shift,
                    y as f64,
                    0.0,
                );
            }
        }
    }
    out
}

/// Discrete reconstruction of the right image:
/// Î^r = Σ_n softmax(shift(V_d))_n ⊙ I^l_n. Returns the reconstruction and
/// the right-view probability volume.
pub fn reconstruct_right(
    tape: &mut Tape,
    left: &RgbImage,
    density: VarId,
    ladder: &DisparityLadder,
) -> Result<(VarId, VarId)> {
    let shape = tape.shape(density);
    if (shape.width, shape.height) != (left.width(), left.height()) {
        return Err(Error::DimensionMismatch(
            "left image and density volume differ in size".into(),
        ));
    }
    let shifted = shift_density_volume(tape, density, ladder)?;
    let v_p_r = tape.softmax_channels(shifted);
    let shifted_images: Vec<Vec<f64>> = ladder
        .levels()
        .iter()
        .map(|&d_n| shifted_image_buffer(left, d_n))
        .collect();
    let i_r_hat = tape.prob_weighted_image_sum(v_p_r, shifted_images);
    Ok((i_r_hat, v_p_r))
}

/// Continuous reconstruction of the left image by backward-warping the
/// right image through the fine depth: Î^l(p) = I^r(p − [B·f_x/D_f(p), 0]).
pub fn reconstruct_left(
    tape: &mut Tape,
    right: VarId,
    fine_depth: VarId,
    rig: &CameraRig,
) -> Result<VarId> {
    reconstruct_left_with_fill(tape, right, fine_depth, rig, 0.0)
}

/// Same as [`reconstruct_left`] with an explicit out-of-frame fill value;
/// tests poison the fill with a sentinel to prove the edge mask keeps it
/// out of the losses.
pub fn reconstruct_left_with_fill(
    tape: &mut Tape,
    right: VarId,
    fine_depth: VarId,
    rig: &CameraRig,
    fill: f64,
) -> Result<VarId> {
    if tape.value(fine_depth).iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositive("fine depth must be > 0".into()));
    }
    let offsets = convert_disparity_depth(tape, rig, fine_depth);
    Ok(tape.warp_horizontal(right, offsets, fill))
}

/// Binary mask of pixels whose T1-projected coordinate stays inside
/// [0, W−1]. Constant during backward.
pub fn edge_mask(fine_depth: &ScalarField, rig: &CameraRig) -> Result<ScalarField> {
    if fine_depth.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositive("fine depth must be > 0".into()));
    }
    let w = fine_depth.width();
    Ok(ScalarField::from_fn(w, fine_depth.height(), |x, y| {
        let (px, _) = warp_coords_t1(rig, (x as f64, y as f64), fine_depth.get(x, y))
            .expect("depth checked positive");
        if px >= 0.0 && px <= (w - 1) as f64 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Detached right-view probability volume for mask building.
pub fn probability_volume_value(tape: &Tape, v_p_r: VarId) -> crate::field::ChannelVolume {
    tape.value_as_volume(v_p_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ChannelVolume;

    fn rig() -> CameraRig {
        CameraRig::new(0.54, 720.0, 720.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn zero_shift_single_level_is_identity() {
        // A one-level ladder cannot exist (discretize needs N >= 2), so use
        // two levels and a one-hot density on the small one shifted by ~0.
        let ladder = DisparityLadder::discretize(1e-9, 1.0, 2).unwrap();
        let left = RgbImage::new(
            4,
            2,
            (0..4 * 2 * 3).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        let mut vol = ChannelVolume::constant(4, 2, 2, 0.0);
        for y in 0..2 {
            for x in 0..4 {
                vol.set(x, y, 1, 60.0);
            }
        }
        let mut tape = Tape::new();
        let density = tape.param_volume(&vol);
        let (i_r_hat, v_p_r) = reconstruct_right(&mut tape, &left, density, &ladder).unwrap();
        assert!(tape.value_as_volume(v_p_r).is_probability(1e-6));
        for (a, b) in tape.value(i_r_hat).iter().zip(left.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_image_reconstructs_constant() {
        let ladder = DisparityLadder::discretize(1.0, 3.0, 3).unwrap();
        let left = RgbImage::constant(8, 4, 0.6);
        let vol = ChannelVolume::constant(8, 4, 3, 0.0);
        let mut tape = Tape::new();
        let density = tape.param_volume(&vol);
        let (i_r_hat, _) = reconstruct_right(&mut tape, &left, density, &ladder).unwrap();
        // Away from the right border every shifted copy is in-frame.
        let img = tape.value_as_image(i_r_hat);
        for y in 0..4 {
            for x in 0..4 {
                for ch in 0..3 {
                    assert!((img.get(x, y, ch) - 0.6).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let ladder = DisparityLadder::discretize(1.0, 3.0, 3).unwrap();
        let left = RgbImage::constant(8, 4, 0.5);
        let mut tape = Tape::new();
        let density = tape.param_volume(&ChannelVolume::constant(4, 4, 3, 0.0));
        assert!(reconstruct_right(&mut tape, &left, density, &ladder).is_err());
    }

    #[test]
    fn infinite_depth_left_reconstruction_is_right_image() {
        let right = RgbImage::new(
            5,
            3,
            (0..5 * 3 * 3).map(|i| ((i * 13) % 10) as f64 / 10.0).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let r = tape.constant_image(&right);
        let depth = tape.param_field(&ScalarField::constant(5, 3, 1e15));
        let rec = reconstruct_left(&mut tape, r, depth, &rig()).unwrap();
        for (a, b) in tape.value(rec).iter().zip(right.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn left_reconstruction_rejects_nonpositive_depth() {
        let right = RgbImage::constant(4, 2, 0.5);
        let mut tape = Tape::new();
        let r = tape.constant_image(&right);
        let depth = tape.param_field(&ScalarField::constant(4, 2, 0.0));
        assert!(reconstruct_left(&mut tape, r, depth, &rig()).is_err());
    }

    #[test]
    fn edge_mask_uniform_disparity() {
        let rig = rig();
        // depth giving disparity exactly 5 px
        let depth = ScalarField::constant(12, 3, rig.bf() / 5.0);
        let mask = edge_mask(&depth, &rig).unwrap();
        for y in 0..3 {
            for x in 0..12 {
                let expect = if x < 5 { 0.0 } else { 1.0 };
                assert_eq!(mask.get(x, y), expect);
            }
        }
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn edge_mask_far_depth_keeps_all_but_first_column() {
        // disparity ~4e-13: column 0 still warps (barely) out of frame
        let depth = ScalarField::constant(6, 2, 1e15);
        let mask = edge_mask(&depth, &rig()).unwrap();
        for y in 0..2 {
            assert_eq!(mask.get(0, y), 0.0);
            for x in 1..6 {
                assert_eq!(mask.get(x, y), 1.0);
            }
        }
    }

    #[test]
    fn right_probability_volume_is_valid_probability() {
        let ladder = DisparityLadder::discretize(1.0, 6.0, 4).unwrap();
        let mut vol = ChannelVolume::constant(10, 5, 4, 0.0);
        for (i, v) in vol.data_mut().iter_mut().enumerate() {
            *v = ((i * 31) % 13) as f64 * 0.2 - 1.0;
        }
        let left = RgbImage::constant(10, 5, 0.4);
        let mut tape = Tape::new();
        let density = tape.param_volume(&vol);
        let (_, v_p_r) = reconstruct_right(&mut tape, &left, density, &ladder).unwrap();
        assert!(tape.value_as_volume(v_p_r).is_probability(1e-6));
    }

    #[test]
    fn bilinear_shift_consistency_with_field_ops() {
        // channel n of the shifted volume equals horizontal_shift by d_n
        let ladder = DisparityLadder::discretize(1.0, 4.0, 3).unwrap();
        let mut vol = ChannelVolume::constant(9, 2, 3, 0.0);
        for (i, v) in vol.data_mut().iter_mut().enumerate() {
            *v = ((i * 7) % 10) as f64;
        }
        let mut tape = Tape::new();
        let density = tape.param_volume(&vol);
        let shifted = shift_density_volume(&mut tape, density, &ladder).unwrap();
        let shifted_vol = tape.value_as_volume(shifted);
        for n in 0..3 {
            let expect = crate::field::horizontal_shift(&vol.channel(n), ladder.level(n));
            for y in 0..2 {
                for x in 0..9 {
                    assert!((shifted_vol.get(x, y, n) - expect.get(x, y)).abs() < 1e-12);
                }
            }
        }
    }
}
