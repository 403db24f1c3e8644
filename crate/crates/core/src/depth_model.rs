//! Coarse-to-fine depth head over directly optimizable per-pixel
//! parameters: a density volume for the discrete branch and a bounded
//! residual field for the continuous branch.

use crate::error::{Error, Result};
use crate::field::{ChannelVolume, ScalarField};
use crate::geometry::{convert_disparity_depth, CameraRig, DisparityLadder};
use crate::tape::{Tape, VarId};

/// The optimizable unknowns for one stereo pair.
#[derive(Debug, Clone)]
pub struct SceneParams {
    /// Unconstrained logits; softmax over channels yields the probability
    /// volume.
    pub raw_density: ChannelVolume,
    /// Unconstrained reals; sigmoid yields the residual feature map.
    pub raw_residual: ScalarField,
}

impl SceneParams {
    /// Uniform probability volume, zero residual.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            raw_density: ChannelVolume::constant(width, height, channels, 0.0),
            raw_residual: ScalarField::constant(width, height, 0.0),
        }
    }

    /// One-hot density at the ladder level nearest to each ground-truth
    /// disparity, plus a zero residual. Used by fixed-point oracles.
    pub fn from_gt_disparity(gt: &ScalarField, ladder: &DisparityLadder, logit: f64) -> Self {
        let mut vol = ChannelVolume::constant(gt.width(), gt.height(), ladder.len(), 0.0);
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let d = gt.get(x, y);
                let best = (0..ladder.len())
                    .min_by(|&a, &b| {
                        (ladder.level(a) - d)
                            .abs()
                            .total_cmp(&(ladder.level(b) - d).abs())
                    })
                    .unwrap();
                vol.set(x, y, best, logit);
            }
        }
        Self {
            raw_density: vol,
            raw_residual: ScalarField::constant(gt.width(), gt.height(), 0.0),
        }
    }
}

/// Tape handles for the registered parameters of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub raw_density: VarId,
    pub raw_residual: VarId,
}

/// All intermediate heads of one forward pass, as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct CoarseFineVars {
    pub probability_volume: VarId,
    pub coarse_disparity: VarId,
    pub coarse_depth: VarId,
    pub residual_depth: VarId,
    pub fine_depth: VarId,
    pub fine_disparity: VarId,
}

/// Detached snapshot of the coarse-to-fine outputs.
#[derive(Debug, Clone)]
pub struct CoarseFineOutput {
    pub probability_volume: ChannelVolume,
    pub coarse_disparity: ScalarField,
    pub coarse_depth: ScalarField,
    pub residual_depth: ScalarField,
    pub fine_depth: ScalarField,
    pub fine_disparity: ScalarField,
}

impl CoarseFineOutput {
    pub fn from_vars(tape: &Tape, vars: &CoarseFineVars) -> Self {
        Self {
            probability_volume: tape.value_as_volume(vars.probability_volume),
            coarse_disparity: tape.value_as_field(vars.coarse_disparity),
            coarse_depth: tape.value_as_field(vars.coarse_depth),
            residual_depth: tape.value_as_field(vars.residual_depth),
            fine_depth: tape.value_as_field(vars.fine_depth),
            fine_disparity: tape.value_as_field(vars.fine_disparity),
        }
    }
}

/// Probability volume and probability-weighted coarse disparity:
/// d_c(p) = Σ_n softmax(V_d)(p,n) · d_n.
pub fn coarse_disparity(
    tape: &mut Tape,
    raw_density: VarId,
    ladder: &DisparityLadder,
) -> Result<(VarId, VarId)> {
    let channels = tape.shape(raw_density).channels;
    if channels != ladder.len() {
        return Err(Error::ChannelMismatch {
            expected: ladder.len(),
            got: channels,
        });
    }
    let v_p = tape.softmax_channels(raw_density);
    let d_c = tape.channel_weighted_sum(v_p, ladder.levels());
    Ok((v_p, d_c))
}

/// Bounded residual: w · (sigmoid(raw) − 0.5) ∈ [−w/2, w/2].
pub fn residual_depth(tape: &mut Tape, raw_residual: VarId, w: f64) -> Result<VarId> {
    if w <= 0.0 {
        return Err(Error::NonPositive("residual width w must be > 0".into()));
    }
    let f_res = tape.sigmoid(raw_residual);
    let centered = tape.add_scalar(f_res, -0.5);
    Ok(tape.scale(centered, w))
}

/// Fine depth D_c + D_res, floor-clamped at B·f_x/d_max so the warp stays
/// defined when the residual undershoots.
pub fn fine_depth(
    tape: &mut Tape,
    coarse_depth: VarId,
    residual: VarId,
    depth_floor: f64,
) -> Result<VarId> {
    if tape.shape(coarse_depth) != tape.shape(residual) {
        return Err(Error::DimensionMismatch(
            "coarse depth and residual differ in size".into(),
        ));
    }
    let sum = tape.add(coarse_depth, residual);
    Ok(tape.clamp_min(sum, depth_floor))
}

/// Full head: density → probability volume → coarse disparity → coarse
/// depth → (+ residual) → fine depth → fine disparity. Every intermediate
/// is recorded on the tape.
pub fn forward(
    tape: &mut Tape,
    params: ParamVars,
    rig: &CameraRig,
    ladder: &DisparityLadder,
    w: f64,
) -> Result<CoarseFineVars> {
    let (v_p, d_c) = coarse_disparity(tape, params.raw_density, ladder)?;
    let depth_c = convert_disparity_depth(tape, rig, d_c);
    let res = residual_depth(tape, params.raw_residual, w)?;
    let depth_floor = rig.bf() / ladder.d_max;
    let depth_f = fine_depth(tape, depth_c, res, depth_floor)?;
    let d_f = convert_disparity_depth(tape, rig, depth_f);
    Ok(CoarseFineVars {
        probability_volume: v_p,
        coarse_disparity: d_c,
        coarse_depth: depth_c,
        residual_depth: res,
        fine_depth: depth_f,
        fine_disparity: d_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> CameraRig {
        CameraRig::new(0.54, 720.0, 720.0, 0.0, 0.0).unwrap()
    }

    fn run_forward(params: &SceneParams, ladder: &DisparityLadder, w: f64) -> CoarseFineOutput {
        let mut tape = Tape::new();
        let vars = ParamVars {
            raw_density: tape.param_volume(&params.raw_density),
            raw_residual: tape.param_field(&params.raw_residual),
        };
        let out = forward(&mut tape, vars, &rig(), ladder, w).unwrap();
        CoarseFineOutput::from_vars(&tape, &out)
    }

    #[test]
    fn one_hot_density_selects_level() {
        let ladder = DisparityLadder::discretize(2.0, 300.0, 5).unwrap();
        let mut params = SceneParams::zeros(3, 2, 5);
        for y in 0..2 {
            for x in 0..3 {
                params.raw_density.set(x, y, 2, 200.0);
            }
        }
        let out = run_forward(&params, &ladder, 10.0);
        let expect = ladder.level(2);
        for &d in out.coarse_disparity.data() {
            assert!((d - expect).abs() < 1e-9);
        }
        for &depth in out.fine_depth.data() {
            assert!((depth - rig().bf() / expect).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_density_averages_levels() {
        let ladder = DisparityLadder::discretize(2.0, 300.0, 2).unwrap();
        let params = SceneParams::zeros(2, 2, 2);
        let out = run_forward(&params, &ladder, 10.0);
        for &d in out.coarse_disparity.data() {
            assert!((d - 151.0).abs() < 1e-12);
        }
        // zero raw residual -> sigmoid 0.5 -> zero residual depth
        for (&f, &c) in out.fine_depth.data().iter().zip(out.coarse_depth.data()) {
            assert_eq!(f, c);
        }
    }

    #[test]
    fn coarse_disparity_stays_in_ladder_range() {
        let ladder = DisparityLadder::discretize(2.0, 300.0, 49).unwrap();
        let mut params = SceneParams::zeros(4, 3, 49);
        for (i, v) in params.raw_density.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 - 5.0;
        }
        let out = run_forward(&params, &ladder, 10.0);
        for &d in out.coarse_disparity.data() {
            assert!((2.0..=300.0).contains(&d));
        }
    }

    #[test]
    fn residual_saturation_bounds() {
        let mut tape = Tape::new();
        let raw = ScalarField::new(3, 1, vec![0.0, 100.0, -100.0]).unwrap();
        let p = tape.param_field(&raw);
        let res = residual_depth(&mut tape, p, 10.0).unwrap();
        let v = tape.value(res);
        assert!(v[0].abs() < 1e-12);
        assert!((v[1] - 5.0).abs() < 1e-9);
        assert!((v[2] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn residual_rejects_nonpositive_width() {
        let mut tape = Tape::new();
        let p = tape.param_field(&ScalarField::constant(1, 1, 0.0));
        assert!(residual_depth(&mut tape, p, 0.0).is_err());
    }

    #[test]
    fn fine_depth_sum_and_clamp() {
        let mut tape = Tape::new();
        let c = tape.param_field(&ScalarField::constant(2, 1, 20.0));
        let r = tape.param_field(&ScalarField::constant(2, 1, -5.0));
        let f = fine_depth(&mut tape, c, r, 1.0).unwrap();
        assert!(tape.value(f).iter().all(|&v| (v - 15.0).abs() < 1e-12));

        let mut tape = Tape::new();
        let floor = 1.296; // bf/d_max for the test rig with d_max = 300
        let c = tape.param_field(&ScalarField::constant(2, 1, floor));
        let r = tape.param_field(&ScalarField::constant(2, 1, -5.0));
        let f = fine_depth(&mut tape, c, r, floor).unwrap();
        assert!(tape.value(f).iter().all(|&v| v == floor));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let ladder = DisparityLadder::discretize(2.0, 300.0, 5).unwrap();
        let mut tape = Tape::new();
        let p = tape.param_volume(&ChannelVolume::constant(2, 2, 4, 0.0));
        assert!(matches!(
            coarse_disparity(&mut tape, p, &ladder),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn logit_shift_leaves_coarse_disparity_unchanged() {
        let ladder = DisparityLadder::discretize(2.0, 300.0, 5).unwrap();
        let mut params = SceneParams::zeros(2, 2, 5);
        for (i, v) in params.raw_density.data_mut().iter_mut().enumerate() {
            *v = (i % 7) as f64 * 0.3;
        }
        let base = run_forward(&params, &ladder, 10.0);
        for v in params.raw_density.data_mut().iter_mut() {
            *v += 4.2;
        }
        let shifted = run_forward(&params, &ladder, 10.0);
        for (a, b) in base
            .coarse_disparity
            .data()
            .iter()
            .zip(shifted.coarse_disparity.data())
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_bounded_by_half_width() {
        let ladder = DisparityLadder::discretize(2.0, 300.0, 3).unwrap();
        let mut params = SceneParams::zeros(3, 3, 3);
        for (i, v) in params.raw_residual.data_mut().iter_mut().enumerate() {
            *v = (i as f64 - 4.0) * 50.0;
        }
        let w = 10.0;
        let out = run_forward(&params, &ladder, w);
        for (&f, &c) in out.fine_depth.data().iter().zip(out.coarse_depth.data()) {
            // clamp never fires here: coarse depths are far above the floor
            assert!(f - c >= -0.5 * w - 1e-12 && f - c <= 0.5 * w + 1e-12);
        }
    }
}
