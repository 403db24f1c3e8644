//! Deterministic synthetic stereo scenes with exact ground truth. Layered
//! fronto-parallel (or slightly slanted) planes textured with value noise;
//! the right view and the occlusion mask come from a z-buffer forward
//! splat, which doubles as the visibility oracle for the mask tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RgbImage, ScalarField};
use crate::geometry::CameraRig;

/// Axis-aligned pixel rectangle, half-open on the right/bottom.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Rect {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One plane of the scene. `depth_slope_x` (meters per pixel) tilts the
/// plane for the sub-pixel-disparity test family; 0 keeps it
/// fronto-parallel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub depth: f64,
    #[serde(default)]
    pub depth_slope_x: f64,
    pub rect: Rect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// First layer must cover the full frame; later layers override where
    /// nearer.
    pub layers: Vec<Layer>,
    pub noise_octaves: usize,
    pub noise_amplitude: f64,
    /// Valid disparity range the layers must stay inside.
    pub d_min: f64,
    pub d_max: f64,
    pub rig: CameraRig,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::standard_two_layer(7)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub left: RgbImage,
    pub right: RgbImage,
    pub gt_depth: ScalarField,
    pub gt_disparity: ScalarField,
    /// 1 = visible in both views, 0 = occluded or out of frame.
    pub gt_occlusion: ScalarField,
    pub rig: CameraRig,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        validate(self)
    }
}

fn validate(spec: &SceneSpec) -> Result<()> {
    if spec.width < 2 || spec.height < 2 {
        return Err(Error::InvalidSpec("frame must be at least 2x2".into()));
    }
    if spec.layers.is_empty() {
        return Err(Error::InvalidSpec("no layers".into()));
    }
    let bg = &spec.layers[0].rect;
    if !(bg.x0 == 0 && bg.y0 == 0 && bg.x1 >= spec.width && bg.y1 >= spec.height) {
        return Err(Error::InvalidSpec(
            "first layer must cover the full frame".into(),
        ));
    }
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.rect.x0 >= layer.rect.x1 || layer.rect.y0 >= layer.rect.y1 {
            return Err(Error::InvalidSpec(format!("layer {i} has an empty rect")));
        }
        let span = (layer.rect.x1 - layer.rect.x0) as f64;
        for depth in [layer.depth, layer.depth + layer.depth_slope_x * span] {
            if depth <= 0.0 {
                return Err(Error::InvalidSpec(format!("layer {i} reaches depth <= 0")));
            }
            let d = spec.rig.bf() / depth;
            if d < spec.d_min - 1e-9 || d > spec.d_max + 1e-9 {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} disparity {d:.3} outside [{}, {}]",
                    spec.d_min, spec.d_max
                )));
            }
        }
    }
    Ok(())
}

/// Multi-octave value noise in [−1, 1], bilinear between lattice points.
fn value_noise(width: usize, height: usize, octaves: usize, seed: u64) -> ScalarField {
    let mut out = ScalarField::constant(width, height, 0.0);
    let mut weight = 1.0;
    let mut total = 0.0;
    for octave in 0..octaves.max(1) {
        let cell = (16 >> octave).max(2) as f64;
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 * (octave as u64 + 1)));
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for y in 0..height {
            for x in 0..width {
                let fx = x as f64 / cell;
                let fy = y as f64 / cell;
                let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (fx.fract(), fy.fract());
                let at = |gx: usize, gy: usize| lattice[gy * gw + gx];
                let v = (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(ix + 1, iy))
                    + ty * ((1.0 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1));
                let slot = out.data_mut();
                slot[y * width + x] += weight * v;
            }
        }
        total += weight;
        weight *= 0.5;
    }
    out.map(|v| v / total)
}

/// Forward z-buffer splat of the left image into the right view.
/// Returns the right image (holes filled by horizontal nearest neighbor)
/// and the left-view occlusion mask (1 = the pixel wins its target and
/// lands in frame).
pub fn render_right(left: &RgbImage, gt_disparity: &ScalarField) -> (RgbImage, ScalarField) {
    let (w, h) = (left.width(), left.height());
    let mut right = RgbImage::constant(w, h, 0.0);
    let mut occ = ScalarField::constant(w, h, 0.0);
    for y in 0..h {
        // winner per target column: (disparity, source x)
        let mut winner: Vec<Option<(f64, usize)>> = vec![None; w];
        for x in 0..w {
            let d = gt_disparity.get(x, y);
            let target = (x as f64 - d).round();
            if target < 0.0 || target > (w - 1) as f64 {
                continue;
            }
            let t = target as usize;
            let better = match winner[t] {
                None => true,
                Some((wd, wx)) => d > wd || (d == wd && x > wx),
            };
            if better {
                winner[t] = Some((d, x));
            }
        }
        for (t, slot) in winner.iter().enumerate() {
            if let Some((_, sx)) = *slot {
                for ch in 0..3 {
                    right.set(t, y, ch, left.get(sx, y, ch));
                }
                occ.set(sx, y, 1.0);
            }
        }
        // hole fill: nearest filled column in the row
        let filled: Vec<usize> = winner
            .iter()
            .enumerate()
            .filter_map(|(t, s)| s.map(|_| t))
            .collect();
        if !filled.is_empty() {
            for t in 0..w {
                if winner[t].is_none() {
                    let nearest = *filled
                        .iter()
                        .min_by_key(|&&f| (f as i64 - t as i64).unsigned_abs())
                        .unwrap();
                    for ch in 0..3 {
                        let v = right.get(nearest, y, ch);
                        right.set(t, y, ch, v);
                    }
                }
            }
        }
    }
    (right, occ)
}

/// Build the full scene: texture, composite, depth, splat.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    validate(spec)?;
    let (w, h) = (spec.width, spec.height);

    // nearest layer per pixel
    let mut depth = ScalarField::constant(w, h, f64::INFINITY);
    let mut owner = vec![0usize; w * h];
    for (i, layer) in spec.layers.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                if layer.rect.contains(x, y) {
                    let d = layer.depth + layer.depth_slope_x * (x - layer.rect.x0) as f64;
                    if d < depth.get(x, y) {
                        depth.set(x, y, d);
                        owner[y * w + x] = i;
                    }
                }
            }
        }
    }

    // per-layer textures: a base color plus shared-shape noise
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amp = spec.noise_amplitude;
    let mut textures = Vec::with_capacity(spec.layers.len());
    for i in 0..spec.layers.len() {
        let base: [f64; 3] = [
            rng.gen_range(0.25..0.75),
            rng.gen_range(0.25..0.75),
            rng.gen_range(0.25..0.75),
        ];
        let noise: Vec<ScalarField> = (0..3)
            .map(|ch| {
                value_noise(
                    w,
                    h,
                    spec.noise_octaves,
                    spec.seed
                        .wrapping_add(1 + i as u64 * 3 + ch as u64)
                        .wrapping_mul(0x5851_f42d_4c95_7f2d),
                )
            })
            .collect();
        textures.push((base, noise));
    }

    let mut left = RgbImage::constant(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (base, noise) = &textures[owner[y * w + x]];
            for ch in 0..3 {
                left.set(x, y, ch, base[ch] + amp * noise[ch].get(x, y));
            }
        }
    }

    let bf = spec.rig.bf();
    let gt_disparity = depth.map(|d| bf / d);
    let (right, gt_occlusion) = render_right(&left, &gt_disparity);

    Ok(SyntheticScene {
        left,
        right,
        gt_depth: depth,
        gt_disparity,
        gt_occlusion,
        rig: spec.rig,
        seed: spec.seed,
    })
}

impl SceneSpec {
    /// The standard desk-scale two-layer scene: a full-frame background at
    /// disparity 4 and a foreground rectangle at disparity 16 (both powers
    /// of two, so depth↔disparity round trips are exact).
    pub fn standard_two_layer(seed: u64) -> Self {
        let rig = CameraRig::new(0.54, 720.0, 720.0, 64.0, 48.0).expect("valid rig");
        let bf = rig.bf();
        SceneSpec {
            width: 128,
            height: 96,
            layers: vec![
                Layer {
                    depth: bf / 4.0,
                    depth_slope_x: 0.0,
                    rect: Rect::full(128, 96),
                },
                Layer {
                    depth: bf / 16.0,
                    depth_slope_x: 0.0,
                    rect: Rect {
                        x0: 40,
                        y0: 24,
                        x1: 92,
                        y1: 72,
                    },
                },
            ],
            noise_octaves: 4,
            noise_amplitude: 0.45,
            d_min: 2.0,
            d_max: 32.0,
            rig,
            seed,
        }
    }

    /// Slanted-plane variant exercising sub-pixel disparities.
    pub fn slanted(seed: u64) -> Self {
        let mut spec = Self::standard_two_layer(seed);
        spec.layers[1].depth_slope_x = 0.05;
        spec
    }

    /// Degenerate textureless scene; photometric losses are
    /// ill-conditioned here on purpose.
    pub fn textureless(seed: u64) -> Self {
        let mut spec = Self::standard_two_layer(seed);
        spec.noise_amplitude = 0.0;
        spec
    }
}
