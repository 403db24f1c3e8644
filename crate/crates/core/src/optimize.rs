//! Per-scene gradient optimization: Adam over the scene parameters with
//! the halve-at-60%/80% learning-rate schedule and the three constraint
//! modes (full coarse-to-fine, discrete-only, continuous-only).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::depth_model::{self, CoarseFineOutput, ParamVars, SceneParams};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{convert_disparity_depth, DisparityLadder};
use crate::losses::{
    loss_coarse_reconstruction, loss_coarse_smooth, loss_fine_reconstruction, loss_fine_smooth,
    ConstraintMode, LossWeights, PyramidFeatures,
};
use crate::occlusion;
use crate::reconstruction::{edge_mask, reconstruct_left, reconstruct_right};
use crate::synth::SyntheticScene;
use crate::tape::Tape;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// (iteration, learning-rate multiplier) breakpoints, strictly
    /// increasing; empty means the default halve-at-60%/80% schedule.
    pub schedule: Vec<(usize, f64)>,
    pub mode: ConstraintMode,
    /// Residual depth bound w in meters.
    pub residual_width: f64,
    /// Right-neighbor horizon K of the disparity-map mask.
    pub neighbor_horizon: usize,
    pub weights: LossWeights,
    /// Fraction of the budget spent on the discrete branch alone before
    /// the joint objective switches on (coarse-to-fine mode only). Direct
    /// per-pixel optimization needs this: from a uniform start the
    /// continuous warp term is strong enough to drag the coarse branch
    /// into a photometric local minimum.
    pub warmup_fraction: f64,
    /// Global L2 gradient clip.
    pub grad_clip: f64,
    /// Forcing the occlusion mask to 1 everywhere is the ablation switch.
    pub use_occlusion_mask: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-1,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 250,
            schedule: Vec::new(),
            mode: ConstraintMode::CoarseToFine,
            residual_width: 10.0,
            neighbor_horizon: 41,
            weights: LossWeights::default(),
            warmup_fraction: 0.4,
            grad_clip: 10.0,
            use_occlusion_mask: true,
        }
    }
}

/// Halve the learning rate at 60% and 80% of the budget, mirroring an
/// epoch schedule of halving at 30/50 and 40/50.
pub fn default_schedule(iterations: usize) -> Vec<(usize, f64)> {
    vec![(iterations * 6 / 10, 0.5), (iterations * 8 / 10, 0.25)]
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("beta1, beta2 must be in [0,1)".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("need at least 1 iteration".into()));
        }
        if self.learning_rate <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(
                "learning rate and epsilon must be positive".into(),
            ));
        }
        if self.residual_width <= 0.0 {
            return Err(Error::InvalidConfig("residual width must be > 0".into()));
        }
        if self.neighbor_horizon < 1 {
            return Err(Error::InvalidConfig("neighbor horizon must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(
                "warmup fraction must be in [0,1)".into(),
            ));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidConfig(
                    "schedule iterations must be strictly increasing".into(),
                ));
            }
        }
        self.weights.validate()
    }

    fn lr_at(&self, iter: usize) -> f64 {
        let schedule = if self.schedule.is_empty() {
            default_schedule(self.iterations)
        } else {
            self.schedule.clone()
        };
        let mut lr = self.learning_rate;
        for &(at, mult) in &schedule {
            if iter >= at {
                lr = self.learning_rate * mult;
            }
        }
        lr
    }
}

/// First/second moment buffers for one parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update. `iter` is 0-based; the schedule
/// multiplier applies on top of the base learning rate.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &OptimizerConfig,
    iter: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(
            "adam buffers disagree in length".into(),
        ));
    }
    let t = (iter + 1) as f64;
    let lr = config.lr_at(iter);
    let bc1 = 1.0 - config.beta1.powf(t);
    let bc2 = 1.0 - config.beta2.powf(t);
    for i in 0..params.len() {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Scale gradient blocks so their joint L2 norm is at most `max_norm`.
fn clip_gradients(blocks: &mut [&mut Vec<f64>], max_norm: f64) {
    let norm: f64 = blocks
        .iter()
        .flat_map(|b| b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for block in blocks.iter_mut() {
            for g in block.iter_mut() {
                *g *= s;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRow {
    pub iter: usize,
    pub coarse_reconstruction: f64,
    pub fine_reconstruction: f64,
    pub coarse_smooth: f64,
    pub fine_smooth: f64,
    pub total: f64,
}

/// Masks of the final iterate, exported for inspection.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub volume: ScalarField,
    pub disparity: ScalarField,
    pub occlusion: ScalarField,
    pub edge: ScalarField,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trace: Vec<LossRow>,
    pub final_output: CoarseFineOutput,
    pub final_masks: MaskSet,
    pub duration: Duration,
    pub config: OptimizerConfig,
}

/// One forward evaluation of the active branches: scalar loss terms plus
/// the tape, outputs and masks needed by the caller.
struct Evaluation {
    tape: Tape,
    params: ParamVars,
    row: (f64, f64, f64, f64, f64),
    total: crate::tape::VarId,
    output: CoarseFineOutput,
    masks: MaskSet,
}

fn evaluate(
    params: &SceneParams,
    scene: &SyntheticScene,
    ladder: &DisparityLadder,
    config: &OptimizerConfig,
    mode: ConstraintMode,
) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let vars = ParamVars {
        raw_density: tape.param_volume(&params.raw_density),
        raw_residual: tape.param_field(&params.raw_residual),
    };

    let head = if mode == ConstraintMode::CdcOnly {
        cdc_head(&mut tape, vars, scene, ladder)?
    } else {
        depth_model::forward(&mut tape, vars, &scene.rig, ladder, config.residual_width)?
    };

    // detached masks of the current iterate
    let d_c_val = tape.value_as_field(head.coarse_disparity);
    let fine_depth_val = tape.value_as_field(head.fine_depth);
    let m_edge = edge_mask(&fine_depth_val, &scene.rig)?;
    let m_m = occlusion::mask_from_disparity(&d_c_val, config.neighbor_horizon)?;

    let ones = ScalarField::constant(scene.left.width(), scene.left.height(), 1.0);
    let extractor = PyramidFeatures::default();

    let mut l_cr = 0.0;
    let mut l_fr = 0.0;
    let mut l_cs = 0.0;
    let mut l_fs = 0.0;
    let mut active: Vec<(crate::tape::VarId, f64)> = Vec::new();
    let m_v;
    let m_occ;

    if mode.uses_ddc() {
        let (i_r_hat, v_p_r) =
            reconstruct_right(&mut tape, &scene.left, vars.raw_density, ladder)?;
        let i_r = tape.constant_image(&scene.right);
        let cr = loss_coarse_reconstruction(
            &mut tape,
            i_r_hat,
            i_r,
            &extractor,
            config.weights.alpha1,
        )?;
        let cs = loss_coarse_smooth(
            &mut tape,
            head.coarse_disparity,
            &scene.left,
            config.weights.beta_c,
        )?;
        let cyc = occlusion::cyclic_volume(&tape.value_as_volume(v_p_r), ladder);
        m_v = occlusion::mask_from_volume(&cyc);
        l_cr = tape.scalar_value(cr);
        l_cs = tape.scalar_value(cs);
        active.push((cr, 1.0));
        active.push((cs, config.weights.lambda2));
    } else {
        m_v = ones.clone();
    }

    m_occ = if mode == ConstraintMode::CdcOnly || !config.use_occlusion_mask {
        ones.clone()
    } else {
        occlusion::combine(&m_v, &m_m)?
    };

    if mode.uses_cdc() {
        let i_r = tape.constant_image(&scene.right);
        let i_l_hat = reconstruct_left(&mut tape, i_r, head.fine_depth, &scene.rig)?;
        let i_l = tape.constant_image(&scene.left);
        let fr = loss_fine_reconstruction(
            &mut tape,
            i_l_hat,
            i_l,
            &m_occ,
            &m_edge,
            config.weights.alpha2,
        )?;
        let fs = loss_fine_smooth(
            &mut tape,
            head.fine_disparity,
            &scene.left,
            &m_occ,
            &m_edge,
            config.weights.beta_f,
        )?;
        l_fr = tape.scalar_value(fr);
        l_fs = tape.scalar_value(fs);
        active.push((fr, config.weights.lambda1));
        active.push((fs, config.weights.lambda3));
    }

    for &(id, _) in &active {
        let v = tape.scalar_value(id);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: format!(
                    "mode {mode}: terms CR={l_cr} FR={l_fr} CS={l_cs} FS={l_fs}"
                ),
                value: v,
            });
        }
    }
    let total = tape.weighted_sum(&active);
    let total_val = tape.scalar_value(total);
    if !total_val.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "total".into(),
            value: total_val,
        });
    }

    let output = CoarseFineOutput::from_vars(&tape, &head);
    let masks = MaskSet {
        volume: m_v,
        disparity: m_m,
        occlusion: m_occ,
        edge: m_edge,
    };
    Ok(Evaluation {
        tape,
        params: vars,
        row: (l_cr, l_fr, l_cs, l_fs, total_val),
        total,
        output,
        masks,
    })
}

/// Continuous-only head: the residual field is reinterpreted as a free
/// disparity parameter through softplus (positivity), the density volume
/// is left untouched at its uniform state.
fn cdc_head(
    tape: &mut Tape,
    vars: ParamVars,
    scene: &SyntheticScene,
    ladder: &DisparityLadder,
) -> Result<depth_model::CoarseFineVars> {
    let sp = tape.softplus(vars.raw_residual);
    let d_f = tape.add_scalar(sp, ladder.d_min);
    let depth_f = convert_disparity_depth(tape, &scene.rig, d_f);
    // probability volume kept for reporting; frozen uniform in practice
    let (v_p, d_c) = depth_model::coarse_disparity(tape, vars.raw_density, ladder)?;
    let depth_c = convert_disparity_depth(tape, &scene.rig, d_c);
    let res = tape.sub(depth_f, depth_c);
    Ok(depth_model::CoarseFineVars {
        probability_volume: v_p,
        coarse_disparity: d_c,
        coarse_depth: depth_c,
        residual_depth: res,
        fine_depth: depth_f,
        fine_disparity: d_f,
    })
}

/// Initial parameters for a mode: uniform density, zero residual; the
/// continuous-only mode seeds its softplus disparity at mid-range.
pub fn initial_params(
    scene: &SyntheticScene,
    ladder: &DisparityLadder,
    mode: ConstraintMode,
) -> SceneParams {
    let (w, h) = (scene.left.width(), scene.left.height());
    let mut params = SceneParams::zeros(w, h, ladder.len());
    if mode == ConstraintMode::CdcOnly {
        // softplus(raw) + d_min = geometric mid of the ladder
        let mid = (ladder.d_min * ladder.d_max).sqrt();
        let raw = ((mid - ladder.d_min).exp() - 1.0f64).ln();
        params.raw_residual = ScalarField::constant(w, h, raw);
    }
    params
}

/// Full optimization loop: forward → backward → clip → Adam, with the
/// frozen-parameter rules of the ablation modes.
pub fn optimize_scene(
    scene: &SyntheticScene,
    ladder: &DisparityLadder,
    config: &OptimizerConfig,
) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let mut params = initial_params(scene, ladder, config.mode);
    let mut density_state = AdamState::zeros(params.raw_density.data().len());
    let mut residual_state = AdamState::zeros(params.raw_residual.data().len());
    let mut trace = Vec::with_capacity(config.iterations);
    let mut last = None;

    let warmup_iters = if config.mode == ConstraintMode::CoarseToFine {
        (config.iterations as f64 * config.warmup_fraction) as usize
    } else {
        0
    };

    for iter in 0..config.iterations {
        let mode = if iter < warmup_iters {
            ConstraintMode::DdcOnly
        } else {
            config.mode
        };
        let eval = evaluate(&params, scene, ladder, config, mode)?;
        let (l_cr, l_fr, l_cs, l_fs, total_val) = eval.row;
        trace.push(LossRow {
            iter,
            coarse_reconstruction: l_cr,
            fine_reconstruction: l_fr,
            coarse_smooth: l_cs,
            fine_smooth: l_fs,
            total: total_val,
        });

        let grads = eval.tape.backward(eval.total)?;
        let mut g_density = grads
            .get(eval.params.raw_density)
            .expect("registered")
            .to_vec();
        let mut g_residual = grads
            .get(eval.params.raw_residual)
            .expect("registered")
            .to_vec();
        clip_gradients(&mut [&mut g_density, &mut g_residual], config.grad_clip);

        let update_density = mode.uses_ddc();
        let update_residual = mode.uses_cdc();
        if update_density {
            adam_step(
                params.raw_density.data_mut(),
                &g_density,
                &mut density_state,
                config,
                iter,
            )?;
        }
        if update_residual {
            adam_step(
                params.raw_residual.data_mut(),
                &g_residual,
                &mut residual_state,
                config,
                iter,
            )?;
        }
        if params.raw_density.data().iter().any(|v| !v.is_finite())
            || params.raw_residual.data().iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFiniteLoss {
                term: format!("parameters after iteration {iter}"),
                value: f64::NAN,
            });
        }
        last = Some((eval.output, eval.masks));
    }

    let (final_output, final_masks) = last.expect("at least one iteration");
    Ok(RunReport {
        trace,
        final_output,
        final_masks,
        duration: start.elapsed(),
        config: config.clone(),
    })
}
