//! Camera model, disparity discretization and the disparity/depth
//! coordinate transformations for a rectified stereo rig.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::tape::{Tape, VarId};

/// Rectified stereo rig: identity rotation, horizontal baseline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    /// Baseline in meters.
    pub baseline: f64,
    /// Horizontal focal length in pixels.
    pub focal_x: f64,
    /// Vertical focal length in pixels.
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
}

impl CameraRig {
    pub fn new(
        baseline: f64,
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
    ) -> Result<Self> {
        if baseline <= 0.0 || focal_x <= 0.0 || focal_y <= 0.0 {
            return Err(Error::NonPositive(
                "baseline and focal lengths must be positive".into(),
            ));
        }
        Ok(Self {
            baseline,
            focal_x,
            focal_y,
            principal_x,
            principal_y,
        })
    }

    /// B·f_x, the disparity-depth conversion constant in pixel·meters.
    pub fn bf(&self) -> f64 {
        self.baseline * self.focal_x
    }
}

/// Mirrored-exponential disparity levels, strictly decreasing from d_max
/// down to d_min.
#[derive(Debug, Clone)]
pub struct DisparityLadder {
    pub d_min: f64,
    pub d_max: f64,
    levels: Vec<f64>,
}

impl DisparityLadder {
    /// levels[n] = d_max · (d_min/d_max)^{n/(N−1)}, n = 0..N−1.
    pub fn discretize(d_min: f64, d_max: f64, n: usize) -> Result<Self> {
        if !(d_min > 0.0 && d_min < d_max) {
            return Err(Error::InvalidRange(format!(
                "need 0 < d_min < d_max, got [{d_min}, {d_max}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidRange("need at least 2 levels".into()));
        }
        let ratio = d_min / d_max;
        // endpoints pinned so they are exact, not round-tripped through powf
        let levels = (0..n)
            .map(|i| {
                if i == 0 {
                    d_max
                } else if i == n - 1 {
                    d_min
                } else {
                    d_max * ratio.powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect();
        Ok(Self {
            d_min,
            d_max,
            levels,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> f64 {
        self.levels[n]
    }
}

/// Element-wise D = B·f_x / d. Disparities must be strictly positive.
pub fn disparity_to_depth(rig: &CameraRig, d: &ScalarField) -> Result<ScalarField> {
    if d.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositive("disparity must be > 0".into()));
    }
    let bf = rig.bf();
    Ok(d.map(|v| bf / v))
}

/// Element-wise d = B·f_x / D. Depths must be strictly positive.
pub fn depth_to_disparity(rig: &CameraRig, depth: &ScalarField) -> Result<ScalarField> {
    if depth.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositive("depth must be > 0".into()));
    }
    let bf = rig.bf();
    Ok(depth.map(|v| bf / v))
}

/// Tape version of the B·f_x/x conversion (its own inverse).
pub fn convert_disparity_depth(tape: &mut Tape, rig: &CameraRig, x: VarId) -> VarId {
    let r = tape.recip(x);
    tape.scale(r, rig.bf())
}

/// T1: project a left-view pixel into the right view through its depth:
/// p' = p − [B·f_x/depth, 0]. Inhomogeneous form; the homogeneous scale
/// cancels.
pub fn warp_coords_t1(rig: &CameraRig, p: (f64, f64), depth: f64) -> Result<(f64, f64)> {
    if depth <= 0.0 {
        return Err(Error::NonPositive("depth must be > 0".into()));
    }
    Ok((p.0 - rig.bf() / depth, p.1))
}

/// T2: shift a coordinate by a fixed disparity level: p' = p + [d_n, 0].
pub fn warp_coords_t2(p: (f64, f64), d_n: f64) -> (f64, f64) {
    (p.0 + d_n, p.1)
}
