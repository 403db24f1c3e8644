//! Finite-difference verification of every differentiable operation.
//!
//! Each check freezes a random instance, takes the analytic gradient once,
//! and compares directional derivatives against central differences in
//! random directions. Instances are constructed so no absolute-value or
//! clamp kink sits within a finite-difference step of the base point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depth_model::{self, ParamVars};
use crate::field::{ChannelVolume, RgbImage, ScalarField};
use crate::geometry::{convert_disparity_depth, CameraRig, DisparityLadder};
use crate::losses::{
    loss_coarse_reconstruction, loss_coarse_smooth, loss_fine_reconstruction, loss_fine_smooth,
    ssim, PyramidFeatures,
};
use crate::reconstruction::{reconstruct_left, reconstruct_right};
use crate::tape::{Tape, VarId};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// One frozen random instance: a base point, the scalar forward map, and
/// its analytic gradient.
struct Instance {
    x0: Vec<f64>,
    forward: Box<dyn Fn(&[f64]) -> f64>,
    gradient: Box<dyn Fn(&[f64]) -> Vec<f64>>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn check_instance(
    name: &'static str,
    inst: &Instance,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> OpCheck {
    let grad = (inst.gradient)(&inst.x0);
    assert_eq!(grad.len(), inst.x0.len());
    let mut max_rel = 0.0f64;
    for _ in 0..directions {
        let v: Vec<f64> = (0..inst.x0.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let analytic: f64 = grad.iter().zip(&v).map(|(g, d)| g * d).sum();
        let plus: Vec<f64> = inst
            .x0
            .iter()
            .zip(&v)
            .map(|(x, d)| x + FD_STEP * d)
            .collect();
        let minus: Vec<f64> = inst
            .x0
            .iter()
            .zip(&v)
            .map(|(x, d)| x - FD_STEP * d)
            .collect();
        let fd = ((inst.forward)(&plus) - (inst.forward)(&minus)) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(analytic, fd));
    }
    OpCheck {
        name,
        max_rel_err: max_rel,
        tolerance: DEFAULT_TOLERANCE,
    }
}

/// Random linear functional with fixed coefficients, so any multi-output
/// op reduces to a scalar.
fn contraction(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn contract(tape: &mut Tape, out: VarId, coeffs: &[f64]) -> VarId {
    let weighted = tape.mul_const(out, coeffs.to_vec());
    tape.sum(weighted)
}

fn test_rig() -> CameraRig {
    CameraRig::new(0.54, 720.0, 720.0, 0.0, 0.0).expect("valid rig")
}

struct Dims {
    width: usize,
    height: usize,
    channels: usize,
}

fn field_scalar_instance(
    dims: &Dims,
    build: impl Fn(&mut Tape, VarId) -> VarId + Clone + 'static,
    x0: Vec<f64>,
) -> Instance {
    let (w, h) = (dims.width, dims.height);
    let fwd_build = build.clone();
    let forward = move |x: &[f64]| {
        let mut tape = Tape::new();
        let f = ScalarField::new(w, h, x.to_vec()).expect("finite input");
        let p = tape.param_field(&f);
        let out = fwd_build(&mut tape, p);
        tape.scalar_value(out)
    };
    let gradient = move |x: &[f64]| {
        let mut tape = Tape::new();
        let f = ScalarField::new(w, h, x.to_vec()).expect("finite input");
        let p = tape.param_field(&f);
        let out = build(&mut tape, p);
        let grads = tape.backward(out).expect("scalar terminal");
        grads.get(p).expect("registered").to_vec()
    };
    Instance {
        x0,
        forward: Box::new(forward),
        gradient: Box::new(gradient),
    }
}

fn volume_scalar_instance(
    dims: &Dims,
    build: impl Fn(&mut Tape, VarId) -> VarId + Clone + 'static,
    x0: Vec<f64>,
) -> Instance {
    let (w, h, c) = (dims.width, dims.height, dims.channels);
    let fwd_build = build.clone();
    let forward = move |x: &[f64]| {
        let mut tape = Tape::new();
        let v = ChannelVolume::new(w, h, c, x.to_vec()).expect("finite input");
        let p = tape.param_volume(&v);
        let out = fwd_build(&mut tape, p);
        tape.scalar_value(out)
    };
    let gradient = move |x: &[f64]| {
        let mut tape = Tape::new();
        let v = ChannelVolume::new(w, h, c, x.to_vec()).expect("finite input");
        let p = tape.param_volume(&v);
        let out = build(&mut tape, p);
        let grads = tape.backward(out).expect("scalar terminal");
        grads.get(p).expect("registered").to_vec()
    };
    Instance {
        x0,
        forward: Box::new(forward),
        gradient: Box::new(gradient),
    }
}

fn image_scalar_instance(
    dims: &Dims,
    build: impl Fn(&mut Tape, VarId) -> VarId + Clone + 'static,
    x0: Vec<f64>,
) -> Instance {
    let (w, h) = (dims.width, dims.height);
    let fwd_build = build.clone();
    let forward = move |x: &[f64]| {
        let mut tape = Tape::new();
        let img = RgbImage::new(w, h, x.to_vec()).expect("finite input");
        let p = tape.param_image(&img);
        let out = fwd_build(&mut tape, p);
        tape.scalar_value(out)
    };
    let gradient = move |x: &[f64]| {
        let mut tape = Tape::new();
        let img = RgbImage::new(w, h, x.to_vec()).expect("finite input");
        let p = tape.param_image(&img);
        let out = build(&mut tape, p);
        let grads = tape.backward(out).expect("scalar terminal");
        grads.get(p).expect("registered").to_vec()
    };
    Instance {
        x0,
        forward: Box::new(forward),
        gradient: Box::new(gradient),
    }
}

/// Run every per-operation check at the given instance size. Each
/// operation appears exactly once.
pub fn run_suite(
    width: usize,
    height: usize,
    channels: usize,
    directions: usize,
    seed: u64,
) -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        width,
        height,
        channels,
    };
    let npix = width * height;
    let rig = test_rig();
    // keep warp offsets well inside the frame and off integer coordinates
    let ladder = DisparityLadder::discretize(1.3, 4.7, channels).expect("valid ladder");
    let mut checks = Vec::new();

    // bilinear sampling: joint gradient w.r.t. field values and sampling
    // coordinates through the offset warp
    {
        let (w, h) = (width, height);
        let mut x0: Vec<f64> = (0..npix).map(|_| rng.gen_range(0.0..1.0)).collect();
        x0.extend((0..npix).map(|_| safe_offset(&mut rng)));
        let coeffs = contraction(npix, &mut rng);
        let cf = coeffs.clone();
        let forward = move |x: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let f = ScalarField::new(w, h, x[..npix].to_vec()).unwrap();
            let o = ScalarField::new(w, h, x[npix..].to_vec()).unwrap();
            let pf = tape.param_field(&f);
            let po = tape.param_field(&o);
            let warped = tape.warp_horizontal(pf, po, 0.0);
            let out = contract(&mut tape, warped, &cf);
            tape.scalar_value(out)
        };
        let cg = coeffs;
        let gradient = move |x: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let f = ScalarField::new(w, h, x[..npix].to_vec()).unwrap();
            let o = ScalarField::new(w, h, x[npix..].to_vec()).unwrap();
            let pf = tape.param_field(&f);
            let po = tape.param_field(&o);
            let warped = tape.warp_horizontal(pf, po, 0.0);
            let out = contract(&mut tape, warped, &cg);
            let grads = tape.backward(out).unwrap();
            let mut g = grads.get(pf).unwrap().to_vec();
            g.extend_from_slice(grads.get(po).unwrap());
            g
        };
        let inst = Instance {
            x0,
            forward: Box::new(forward),
            gradient: Box::new(gradient),
        };
        checks.push(check_instance("bilinear_sample", &inst, directions, &mut rng));
    }

    // horizontal shift of a field by a fixed fractional amount
    {
        let coeffs = contraction(npix, &mut rng);
        let x0: Vec<f64> = (0..npix).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| {
                let s = tape.horizontal_shift(p, 1.4);
                contract(tape, s, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("horizontal_shift", &inst, directions, &mut rng));
    }

    // per-channel density-volume shift
    {
        let coeffs = contraction(npix * channels, &mut rng);
        let shifts: Vec<f64> = ladder.levels().to_vec();
        let x0: Vec<f64> = (0..npix * channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let inst = volume_scalar_instance(
            &dims,
            move |tape, p| {
                let s = tape.shift_channels(p, &shifts);
                contract(tape, s, &coeffs)
            },
            x0,
        );
        checks.push(check_instance(
            "shift_density_volume",
            &inst,
            directions,
            &mut rng,
        ));
    }

    // channel softmax
    {
        let coeffs = contraction(npix * channels, &mut rng);
        let x0: Vec<f64> = (0..npix * channels)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let inst = volume_scalar_instance(
            &dims,
            move |tape, p| {
                let s = tape.softmax_channels(p);
                contract(tape, s, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("softmax_channels", &inst, directions, &mut rng));
    }

    // probability-weighted coarse disparity (softmax + level sum)
    {
        let coeffs = contraction(npix, &mut rng);
        let lad = ladder.clone();
        let x0: Vec<f64> = (0..npix * channels)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let inst = volume_scalar_instance(
            &dims,
            move |tape, p| {
                let (_, d_c) = depth_model::coarse_disparity(tape, p, &lad).unwrap();
                contract(tape, d_c, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("coarse_disparity", &inst, directions, &mut rng));
    }

    // disparity → depth
    {
        let coeffs = contraction(npix, &mut rng);
        let x0: Vec<f64> = (0..npix).map(|_| rng.gen_range(2.0..30.0)).collect();
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| {
                let d = convert_disparity_depth(tape, &test_rig(), p);
                contract(tape, d, &coeffs)
            },
            x0,
        );
        checks.push(check_instance(
            "disparity_to_depth",
            &inst,
            directions,
            &mut rng,
        ));
    }

    // sigmoid residual
    {
        let coeffs = contraction(npix, &mut rng);
        let x0: Vec<f64> = (0..npix).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| {
                let r = depth_model::residual_depth(tape, p, 10.0).unwrap();
                contract(tape, r, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("residual_depth", &inst, directions, &mut rng));
    }

    // coarse + residual with the positivity floor (inactive at this base
    // point so the derivative is classical)
    {
        let coeffs = contraction(npix, &mut rng);
        let residual: Vec<f64> = (0..npix).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let res = residual.clone();
        let x0: Vec<f64> = (0..npix).map(|_| rng.gen_range(20.0..90.0)).collect();
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| {
                let shape = tape.shape(p);
                let r = ScalarField::new(shape.width, shape.height, res.clone()).unwrap();
                let rc = tape.constant_field(&r);
                let f = depth_model::fine_depth(tape, p, rc, 1.3).unwrap();
                contract(tape, f, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("fine_depth", &inst, directions, &mut rng));
    }

    // discrete right-image reconstruction w.r.t. the density volume
    {
        let (w, h) = (width, height);
        let left = random_image(w, h, &mut rng);
        let coeffs = contraction(npix * 3, &mut rng);
        let lad = ladder.clone();
        let x0: Vec<f64> = (0..npix * channels)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        let inst = volume_scalar_instance(
            &dims,
            move |tape, p| {
                let (i_r_hat, _) = reconstruct_right(tape, &left, p, &lad).unwrap();
                contract(tape, i_r_hat, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("reconstruct_right", &inst, directions, &mut rng));
    }

    // continuous left-image reconstruction w.r.t. the fine depth
    {
        let (w, h) = (width, height);
        let right = random_image(w, h, &mut rng);
        let coeffs = contraction(npix * 3, &mut rng);
        // depths whose warp offsets keep their fractional parts interior
        let x0: Vec<f64> = (0..npix)
            .map(|_| test_rig().bf() / safe_offset(&mut rng))
            .collect();
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| {
                let r = tape.constant_image(&right);
                let rec = reconstruct_left(tape, r, p, &test_rig()).unwrap();
                contract(tape, rec, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("reconstruct_left", &inst, directions, &mut rng));
    }

    // coarse reconstruction loss: L1 + perceptual pyramid distance
    {
        let (w, h) = (width, height);
        let target = random_image(w, h, &mut rng);
        let base: Vec<f64> = target
            .data()
            .iter()
            .map(|&v| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                (v + sign * rng.gen_range(0.05..0.3)).clamp(0.02, 0.98)
            })
            .collect();
        let inst = image_scalar_instance(
            &dims,
            move |tape, p| {
                let t = tape.constant_image(&target);
                loss_coarse_reconstruction(tape, p, t, &PyramidFeatures::default(), 0.1).unwrap()
            },
            base,
        );
        checks.push(check_instance(
            "loss_coarse_reconstruction",
            &inst,
            directions,
            &mut rng,
        ));
    }

    // SSIM field
    {
        let (w, h) = (width, height);
        let other = random_image(w, h, &mut rng);
        let coeffs = contraction(npix, &mut rng);
        let x0: Vec<f64> = (0..npix * 3).map(|_| rng.gen_range(0.05..0.95)).collect();
        let inst = image_scalar_instance(
            &dims,
            move |tape, p| {
                let o = tape.constant_image(&other);
                let s = ssim(tape, p, o).unwrap();
                contract(tape, s, &coeffs)
            },
            x0,
        );
        checks.push(check_instance("ssim", &inst, directions, &mut rng));
    }

    // fine reconstruction loss: masked L1 + DSSIM
    {
        let (w, h) = (width, height);
        let target = random_image(w, h, &mut rng);
        let m_occ = ScalarField::from_fn(w, h, |x, y| if (x + y) % 3 == 0 { 0.4 } else { 1.0 });
        let m_edge = ScalarField::from_fn(w, h, |x, _| if x == 0 { 0.0 } else { 1.0 });
        let base: Vec<f64> = target
            .data()
            .iter()
            .map(|&v| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                (v + sign * rng.gen_range(0.05..0.3)).clamp(0.02, 0.98)
            })
            .collect();
        let inst = image_scalar_instance(
            &dims,
            move |tape, p| {
                let t = tape.constant_image(&target);
                loss_fine_reconstruction(tape, p, t, &m_occ, &m_edge, 0.15).unwrap()
            },
            base,
        );
        checks.push(check_instance(
            "loss_fine_reconstruction",
            &inst,
            directions,
            &mut rng,
        ));
    }

    // edge-aware coarse smoothness
    {
        let (w, h) = (width, height);
        let image = random_image(w, h, &mut rng);
        let x0 = rough_disparity(npix, &mut rng);
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| loss_coarse_smooth(tape, p, &image, 2.0).unwrap(),
            x0,
        );
        checks.push(check_instance(
            "loss_coarse_smooth",
            &inst,
            directions,
            &mut rng,
        ));
    }

    // occlusion-weighted fine smoothness
    {
        let (w, h) = (width, height);
        let image = random_image(w, h, &mut rng);
        let m_occ = ScalarField::from_fn(w, h, |x, y| if (x * y) % 4 == 0 { 0.3 } else { 1.0 });
        let m_edge = ScalarField::constant(w, h, 1.0);
        let x0 = rough_disparity(npix, &mut rng);
        let inst = field_scalar_instance(
            &dims,
            move |tape, p| loss_fine_smooth(tape, p, &image, &m_occ, &m_edge, 1.0).unwrap(),
            x0,
        );
        checks.push(check_instance("loss_fine_smooth", &inst, directions, &mut rng));
    }

    // full pipeline gradient w.r.t. both parameter blocks
    {
        let (w, h) = (width, height);
        let spec = crate::synth::SceneSpec {
            width: w,
            height: h,
            layers: vec![crate::synth::Layer {
                depth: rig.bf() / 2.0,
                depth_slope_x: 0.0,
                rect: crate::synth::Rect::full(w, h),
            }],
            noise_octaves: 3,
            noise_amplitude: 0.45,
            d_min: 1.3,
            d_max: 4.7,
            rig,
            seed: seed ^ 0xabcd,
        };
        let scene = crate::synth::generate(&spec).expect("valid spec");
        let lad = ladder.clone();
        let config = crate::optimize::OptimizerConfig {
            mode: crate::losses::ConstraintMode::CoarseToFine,
            ..crate::optimize::OptimizerConfig::default()
        };
        let n_density = npix * channels;
        let mut x0: Vec<f64> = (0..n_density)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        x0.extend((0..npix).map(|_| rng.gen_range(-1.5..1.5)));

        // the masks are detached by design, so they are frozen at the
        // base point; otherwise finite differences would see mask
        // dependence the analytic gradient intentionally excludes
        let frozen_masks = {
            let mut tape = Tape::new();
            let density = ChannelVolume::new(w, h, channels, x0[..n_density].to_vec()).unwrap();
            let residual = ScalarField::new(w, h, x0[n_density..].to_vec()).unwrap();
            let vars = ParamVars {
                raw_density: tape.param_volume(&density),
                raw_residual: tape.param_field(&residual),
            };
            let head =
                depth_model::forward(&mut tape, vars, &scene.rig, &lad, config.residual_width)
                    .unwrap();
            let fine_depth_val = tape.value_as_field(head.fine_depth);
            let m_edge = crate::reconstruction::edge_mask(&fine_depth_val, &scene.rig).unwrap();
            let d_c_val = tape.value_as_field(head.coarse_disparity);
            let m_m = crate::occlusion::mask_from_disparity(&d_c_val, 7).unwrap();
            let (_, v_p_r) =
                reconstruct_right(&mut tape, &scene.left, vars.raw_density, &lad).unwrap();
            let cyc = crate::occlusion::cyclic_volume(&tape.value_as_volume(v_p_r), &lad);
            let m_v = crate::occlusion::mask_from_volume(&cyc);
            let m_occ = crate::occlusion::combine(&m_v, &m_m).unwrap();
            (m_occ, m_edge)
        };

        let eval = move |x: &[f64]| -> (f64, Option<(Vec<f64>, Vec<f64>)>) {
            let (m_occ, m_edge) = &frozen_masks;
            let mut tape = Tape::new();
            let density = ChannelVolume::new(w, h, channels, x[..n_density].to_vec()).unwrap();
            let residual = ScalarField::new(w, h, x[n_density..].to_vec()).unwrap();
            let vars = ParamVars {
                raw_density: tape.param_volume(&density),
                raw_residual: tape.param_field(&residual),
            };
            let head = depth_model::forward(
                &mut tape,
                vars,
                &scene.rig,
                &lad,
                config.residual_width,
            )
            .unwrap();
            let (i_r_hat, _) =
                reconstruct_right(&mut tape, &scene.left, vars.raw_density, &lad).unwrap();
            let i_r = tape.constant_image(&scene.right);
            let cr = loss_coarse_reconstruction(
                &mut tape,
                i_r_hat,
                i_r,
                &PyramidFeatures::default(),
                config.weights.alpha1,
            )
            .unwrap();
            let cs =
                loss_coarse_smooth(&mut tape, head.coarse_disparity, &scene.left, 2.0).unwrap();
            let i_r2 = tape.constant_image(&scene.right);
            let i_l_hat = reconstruct_left(&mut tape, i_r2, head.fine_depth, &scene.rig).unwrap();
            let i_l = tape.constant_image(&scene.left);
            let fr = loss_fine_reconstruction(
                &mut tape,
                i_l_hat,
                i_l,
                m_occ,
                m_edge,
                config.weights.alpha2,
            )
            .unwrap();
            let fs = loss_fine_smooth(
                &mut tape,
                head.fine_disparity,
                &scene.left,
                m_occ,
                m_edge,
                config.weights.beta_f,
            )
            .unwrap();
            let terms = crate::losses::LossTerms {
                coarse_reconstruction: cr,
                fine_reconstruction: fr,
                coarse_smooth: cs,
                fine_smooth: fs,
            };
            let total = crate::losses::total_loss(
                &mut tape,
                terms,
                &config.weights,
                crate::losses::ConstraintMode::CoarseToFine,
            )
            .unwrap();
            let value = tape.scalar_value(total);
            let grads = tape.backward(total).unwrap();
            let gd = grads.get(vars.raw_density).unwrap().to_vec();
            let gr = grads.get(vars.raw_residual).unwrap().to_vec();
            (value, Some((gd, gr)))
        };
        let eval_f = eval.clone();
        let forward = move |x: &[f64]| eval_f(x).0;
        let gradient = move |x: &[f64]| {
            let (_, g) = eval(x);
            let (mut gd, gr) = g.unwrap();
            gd.extend(gr);
            gd
        };
        let inst = Instance {
            x0,
            forward: Box::new(forward),
            gradient: Box::new(gradient),
        };
        checks.push(check_instance("total_loss_pipeline", &inst, directions, &mut rng));
    }

    checks
}

/// Warp offset in [1.2, 3.8] whose fractional part stays in [0.2, 0.8],
/// so no finite-difference step crosses a bilinear integer kink.
fn safe_offset(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(1..=3) as f64 + rng.gen_range(0.2..0.8)
}

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::new(
        w,
        h,
        (0..w * h * 3).map(|_| rng.gen_range(0.05..0.95)).collect(),
    )
    .expect("finite")
}

/// Disparity-like field whose forward differences stay away from 0 so the
/// smoothness L1 kinks are inactive around the base point.
fn rough_disparity(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            10.0 + sign * rng.gen_range(0.1..2.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_small_scale() {
        let checks = run_suite(8, 6, 3, 10, 42);
        for c in &checks {
            assert!(
                c.passed(),
                "{} failed: max rel err {:.3e}",
                c.name,
                c.max_rel_err
            );
        }
    }

    #[test]
    fn op_names_are_unique() {
        let checks = run_suite(6, 4, 3, 2, 1);
        let mut names: Vec<&str> = checks.iter().map(|c| c.name).collect();
        let before = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), before);
    }

    #[test]
    fn perturbed_adjoint_is_flagged() {
        // fault injection: a gradient that lies about one coordinate
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = Instance {
            x0: vec![1.0, 2.0, 3.0],
            forward: Box::new(|x| x.iter().map(|v| v * v).sum()),
            gradient: Box::new(|x| {
                let mut g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
                g[1] += 0.5;
                g
            }),
        };
        let check = check_instance("deliberate_fault", &inst, 20, &mut rng);
        assert!(!check.passed());
    }
}
