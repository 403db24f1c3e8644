//! Reverse-mode differentiation over whole fields and volumes.
//!
//! Forward operations append a node (the value buffer) and a VJP closure to
//! the tape; [`Tape::backward`] replays the closures in exact reverse
//! execution order, accumulating gradients for every registered parameter.
//! One tape belongs to one optimization context and is rebuilt per step.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::field::{ChannelVolume, RgbImage, ScalarField};

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    fn scalar() -> Self {
        Shape {
            width: 1,
            height: 1,
            channels: 1,
        }
    }
}

struct Node {
    data: Vec<f64>,
    shape: Shape,
    needs_grad: bool,
}

/// Gradient buffers during backward, indexed by node id. A node's buffer is
/// taken (and dropped) when its producing op runs; by then every consumer
/// has already accumulated into it.
struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    fn take(&mut self, id: VarId) -> Option<Vec<f64>> {
        self.grads[id.0].take()
    }

    fn buf(&mut self, id: VarId, len: usize) -> &mut Vec<f64> {
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }
}

type Vjp = Box<dyn Fn(&[Node], &mut GradStore)>;

/// Gradients of the backward scalar w.r.t. registered parameters.
pub struct Gradients {
    map: HashMap<VarId, Vec<f64>>,
}

impl Gradients {
    /// Gradient buffer for a parameter; zeros if the parameter never
    /// influenced the output.
    pub fn get(&self, id: VarId) -> Option<&[f64]> {
        self.map.get(&id).map(|v| v.as_slice())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Vjp>,
    params: Vec<VarId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Shape, needs_grad: bool) -> VarId {
        debug_assert_eq!(data.len(), shape.len());
        self.nodes.push(Node {
            data,
            shape,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn record(&mut self, vjp: Vjp) {
        self.ops.push(vjp);
    }

    pub fn shape(&self, id: VarId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: VarId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn value_as_field(&self, id: VarId) -> ScalarField {
        let s = self.shape(id);
        debug_assert_eq!(s.channels, 1);
        ScalarField::new(s.width, s.height, self.value(id).to_vec()).expect("finite tape value")
    }

    pub fn value_as_volume(&self, id: VarId) -> ChannelVolume {
        let s = self.shape(id);
        ChannelVolume::new(s.width, s.height, s.channels, self.value(id).to_vec())
            .expect("finite tape value")
    }

    pub fn value_as_image(&self, id: VarId) -> RgbImage {
        let s = self.shape(id);
        debug_assert_eq!(s.channels, 3);
        RgbImage::new(s.width, s.height, self.value(id).to_vec()).expect("finite tape value")
    }

    fn needs_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── Leaves ─────────────────────────────────────────────────────────

    pub fn constant(&mut self, data: Vec<f64>, shape: Shape) -> VarId {
        self.push(data, shape, false)
    }

    pub fn constant_field(&mut self, f: &ScalarField) -> VarId {
        let shape = Shape {
            width: f.width(),
            height: f.height(),
            channels: 1,
        };
        self.constant(f.data().to_vec(), shape)
    }

    pub fn constant_image(&mut self, img: &RgbImage) -> VarId {
        let shape = Shape {
            width: img.width(),
            height: img.height(),
            channels: 3,
        };
        self.constant(img.data().to_vec(), shape)
    }

    fn register(&mut self, data: Vec<f64>, shape: Shape) -> VarId {
        let id = self.push(data, shape, true);
        self.params.push(id);
        id
    }

    pub fn param_field(&mut self, f: &ScalarField) -> VarId {
        let shape = Shape {
            width: f.width(),
            height: f.height(),
            channels: 1,
        };
        self.register(f.data().to_vec(), shape)
    }

    pub fn param_volume(&mut self, v: &ChannelVolume) -> VarId {
        let shape = Shape {
            width: v.width(),
            height: v.height(),
            channels: v.channels(),
        };
        self.register(v.data().to_vec(), shape)
    }

    pub fn param_image(&mut self, img: &RgbImage) -> VarId {
        let shape = Shape {
            width: img.width(),
            height: img.height(),
            channels: 3,
        };
        self.register(img.data().to_vec(), shape)
    }

    // ── Elementwise ────────────────────────────────────────────────────

    fn binary(
        &mut self,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        vjp: impl Fn(&[Node], &mut GradStore, VarId, VarId, VarId) + 'static,
    ) -> VarId {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |nodes, grads| {
                vjp(nodes, grads, out, a, b)
            }));
        }
        out
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(a, b, |x, y| x + y, |nodes, grads, out, a, b| {
            let Some(go) = grads.take(out) else { return };
            let n = go.len();
            if nodes[a.0].needs_grad {
                let ga = grads.buf(a, n);
                for (g, &d) in ga.iter_mut().zip(&go) {
                    *g += d;
                }
            }
            if nodes[b.0].needs_grad {
                let gb = grads.buf(b, n);
                for (g, &d) in gb.iter_mut().zip(&go) {
                    *g += d;
                }
            }
        })
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(a, b, |x, y| x - y, |nodes, grads, out, a, b| {
            let Some(go) = grads.take(out) else { return };
            let n = go.len();
            if nodes[a.0].needs_grad {
                let ga = grads.buf(a, n);
                for (g, &d) in ga.iter_mut().zip(&go) {
                    *g += d;
                }
            }
            if nodes[b.0].needs_grad {
                let gb = grads.buf(b, n);
                for (g, &d) in gb.iter_mut().zip(&go) {
                    *g -= d;
                }
            }
        })
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(a, b, |x, y| x * y, |nodes, grads, out, a, b| {
            let Some(go) = grads.take(out) else { return };
            let n = go.len();
            if nodes[a.0].needs_grad {
                let bv: Vec<f64> = nodes[b.0].data.clone();
                let ga = grads.buf(a, n);
                for ((g, &d), &y) in ga.iter_mut().zip(&go).zip(&bv) {
                    *g += d * y;
                }
            }
            if nodes[b.0].needs_grad {
                let av: Vec<f64> = nodes[a.0].data.clone();
                let gb = grads.buf(b, n);
                for ((g, &d), &x) in gb.iter_mut().zip(&go).zip(&av) {
                    *g += d * x;
                }
            }
        })
    }

    /// Unary elementwise op; `dfd` maps (input, output) to the local
    /// derivative.
    fn unary(
        &mut self,
        a: VarId,
        f: impl Fn(f64) -> f64,
        dfd: impl Fn(f64, f64) -> f64 + 'static,
    ) -> VarId {
        let sa = self.shape(a);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let needs = self.needs_grad(a);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |nodes, grads| {
                let Some(go) = grads.take(out) else { return };
                let xv = nodes[a.0].data.clone();
                let ov = nodes[out.0].data.clone();
                let ga = grads.buf(a, go.len());
                for i in 0..go.len() {
                    ga[i] += go[i] * dfd(xv[i], ov[i]);
                }
            }));
        }
        out
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> VarId {
        self.unary(a, move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(&mut self, a: VarId, k: f64) -> VarId {
        self.unary(a, move |x| x + k, |_, _| 1.0)
    }

    pub fn recip(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| 1.0 / x, |_, o| -o * o)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, o| o * (1.0 - o),
        )
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            },
            |x, _| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::exp, |_, o| o)
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// sqrt(x + eps); the offset keeps the derivative finite at 0.
    pub fn sqrt_eps(&mut self, a: VarId, eps: f64) -> VarId {
        self.unary(a, move |x| (x + eps).sqrt(), |_, o| 0.5 / o)
    }

    /// Elementwise max(x, floor). Gradient passes where x ≥ floor.
    pub fn clamp_min(&mut self, a: VarId, floor: f64) -> VarId {
        self.unary(
            a,
            move |x| x.max(floor),
            move |x, _| if x >= floor { 1.0 } else { 0.0 },
        )
    }

    /// Multiply by a constant per-element weight buffer (masks, edge
    /// weights). The weights receive no gradient.
    pub fn mul_const(&mut self, a: VarId, weights: Vec<f64>) -> VarId {
        let sa = self.shape(a);
        assert_eq!(weights.len(), sa.len(), "weight buffer length mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| x * w)
            .collect();
        let needs = self.needs_grad(a);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, go.len());
                for i in 0..go.len() {
                    ga[i] += go[i] * weights[i];
                }
            }));
        }
        out
    }

    // ── Reductions ─────────────────────────────────────────────────────

    pub fn sum(&mut self, a: VarId) -> VarId {
        let total: f64 = self.nodes[a.0].data.iter().sum();
        let n = self.nodes[a.0].data.len();
        let needs = self.needs_grad(a);
        let out = self.push(vec![total], Shape::scalar(), needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, n);
                for g in ga.iter_mut() {
                    *g += go[0];
                }
            }));
        }
        out
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let n = self.nodes[a.0].data.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Σ mask·a / #{mask > 0}. Caller guarantees at least one positive
    /// mask entry.
    pub fn masked_mean(&mut self, a: VarId, mask: &[f64]) -> VarId {
        let count = mask.iter().filter(|&&m| m > 0.0).count();
        assert!(count > 0, "masked_mean over an all-zero mask");
        let weighted = self.mul_const(a, mask.to_vec());
        let s = self.sum(weighted);
        self.scale(s, 1.0 / count as f64)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(VarId, f64)]) -> VarId {
        let mut total = 0.0;
        for &(id, w) in terms {
            total += w * self.scalar_value(id);
        }
        let needs = terms.iter().any(|&(id, _)| self.needs_grad(id));
        let terms: Vec<(VarId, f64)> = terms.to_vec();
        let out = self.push(vec![total], Shape::scalar(), needs);
        if needs {
            self.record(Box::new(move |nodes, grads| {
                let Some(go) = grads.take(out) else { return };
                for &(id, w) in &terms {
                    if nodes[id.0].needs_grad {
                        grads.buf(id, 1)[0] += go[0] * w;
                    }
                }
            }));
        }
        out
    }

    // ── Channel operations ─────────────────────────────────────────────

    /// Per-pixel channel softmax, max-subtracted.
    pub fn softmax_channels(&mut self, a: VarId) -> VarId {
        let sa = self.shape(a);
        let c = sa.channels;
        let mut data = self.nodes[a.0].data.clone();
        for px in data.chunks_mut(c) {
            let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in px.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in px.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.needs_grad(a);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |nodes, grads| {
                let Some(go) = grads.take(out) else { return };
                let p = nodes[out.0].data.clone();
                let ga = grads.buf(a, go.len());
                for px in 0..go.len() / c {
                    let base = px * c;
                    let dot: f64 = (0..c).map(|n| go[base + n] * p[base + n]).sum();
                    for n in 0..c {
                        ga[base + n] += p[base + n] * (go[base + n] - dot);
                    }
                }
            }));
        }
        out
    }

    /// Collapse channels with fixed per-channel weights:
    /// out(p) = Σ_n w_n · a(p, n). Yields a single-channel field.
    pub fn channel_weighted_sum(&mut self, a: VarId, weights: &[f64]) -> VarId {
        let sa = self.shape(a);
        assert_eq!(weights.len(), sa.channels, "one weight per channel");
        let c = sa.channels;
        let npix = sa.width * sa.height;
        let mut data = vec![0.0; npix];
        for (px, slot) in data.iter_mut().enumerate() {
            let base = px * c;
            *slot = (0..c)
                .map(|n| self.nodes[a.0].data[base + n] * weights[n])
                .sum();
        }
        let shape = Shape {
            width: sa.width,
            height: sa.height,
            channels: 1,
        };
        let needs = self.needs_grad(a);
        let weights = weights.to_vec();
        let out = self.push(data, shape, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, npix * c);
                for px in 0..npix {
                    for n in 0..c {
                        ga[px * c + n] += go[px] * weights[n];
                    }
                }
            }));
        }
        out
    }

    /// Extract one channel of a multi-channel buffer as a field.
    pub fn channel(&mut self, a: VarId, ch: usize) -> VarId {
        let sa = self.shape(a);
        assert!(ch < sa.channels);
        let c = sa.channels;
        let npix = sa.width * sa.height;
        let data: Vec<f64> = (0..npix)
            .map(|px| self.nodes[a.0].data[px * c + ch])
            .collect();
        let shape = Shape {
            width: sa.width,
            height: sa.height,
            channels: 1,
        };
        let needs = self.needs_grad(a);
        let out = self.push(data, shape, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, npix * c);
                for px in 0..npix {
                    ga[px * c + ch] += go[px];
                }
            }));
        }
        out
    }

    // ── Sampling operations ────────────────────────────────────────────

    /// Shift every channel of `a` horizontally by `shifts[n]` pixels using
    /// 1-D bilinear sampling with zero fill: out(x,y,n) = a(x+shifts[n],y,n).
    pub fn shift_channels(&mut self, a: VarId, shifts: &[f64]) -> VarId {
        let sa = self.shape(a);
        assert_eq!(shifts.len(), sa.channels, "one shift per channel");
        let (w, h, c) = (sa.width, sa.height, sa.channels);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for n in 0..c {
                    let xs = x as f64 + shifts[n];
                    data[(y * w + x) * c + n] = sample_x(src, w, c, n, y, xs, 0.0).0;
                }
            }
        }
        let needs = self.needs_grad(a);
        let shifts = shifts.to_vec();
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, go.len());
                for y in 0..h {
                    for x in 0..w {
                        for n in 0..c {
                            let g = go[(y * w + x) * c + n];
                            if g != 0.0 {
                                scatter_x(ga, w, c, n, y, x as f64 + shifts[n], g);
                            }
                        }
                    }
                }
            }));
        }
        out
    }

    /// Horizontal shift of all channels by the same amount.
    pub fn horizontal_shift(&mut self, a: VarId, shift: f64) -> VarId {
        let c = self.shape(a).channels;
        self.shift_channels_uniform(a, shift, c)
    }

    fn shift_channels_uniform(&mut self, a: VarId, shift: f64, c: usize) -> VarId {
        let shifts = vec![shift; c];
        self.shift_channels(a, &shifts)
    }

    /// Horizontal backward warp with per-pixel offsets:
    /// out(x,y,ch) = image(x − offsets(x,y), y, ch), sampled bilinearly in x
    /// with `fill` outside the frame. Differentiable w.r.t. both inputs.
    pub fn warp_horizontal(&mut self, image: VarId, offsets: VarId, fill: f64) -> VarId {
        let si = self.shape(image);
        let so = self.shape(offsets);
        assert_eq!(so.channels, 1, "offsets must be a field");
        assert_eq!((si.width, si.height), (so.width, so.height));
        let (w, h, c) = (si.width, si.height, si.channels);
        let img = &self.nodes[image.0].data;
        let offs = &self.nodes[offsets.0].data;
        let mut data = vec![0.0; img.len()];
        for y in 0..h {
            for x in 0..w {
                let xs = x as f64 - offs[y * w + x];
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = sample_x(img, w, c, ch, y, xs, fill).0;
                }
            }
        }
        let needs = self.needs_grad(image) || self.needs_grad(offsets);
        let out = self.push(data, si, needs);
        if needs {
            self.record(Box::new(move |nodes, grads| {
                let Some(go) = grads.take(out) else { return };
                let img = nodes[image.0].data.clone();
                let offs = nodes[offsets.0].data.clone();
                let gi = nodes[image.0].needs_grad;
                let gofs = nodes[offsets.0].needs_grad;
                if gi {
                    let g = grads.buf(image, img.len());
                    for y in 0..h {
                        for x in 0..w {
                            let xs = x as f64 - offs[y * w + x];
                            for ch in 0..c {
                                let d = go[(y * w + x) * c + ch];
                                if d != 0.0 {
                                    scatter_x(g, w, c, ch, y, xs, d);
                                }
                            }
                        }
                    }
                }
                if gofs {
                    let g = grads.buf(offsets, offs.len());
                    for y in 0..h {
                        for x in 0..w {
                            let xs = x as f64 - offs[y * w + x];
                            let mut acc = 0.0;
                            for ch in 0..c {
                                let d = go[(y * w + x) * c + ch];
                                if d != 0.0 {
                                    acc += d * sample_x(&img, w, c, ch, y, xs, fill).1;
                                }
                            }
                            // d out / d offset = −d out / d xs
                            g[y * w + x] -= acc;
                        }
                    }
                }
            }));
        }
        out
    }

    /// Probability-weighted sum of constant images:
    /// out(p,ch) = Σ_n vol(p,n) · images[n](p,ch).
    pub fn prob_weighted_image_sum(&mut self, vol: VarId, images: Vec<Vec<f64>>) -> VarId {
        let sv = self.shape(vol);
        let (w, h, n_ch) = (sv.width, sv.height, 3usize);
        let npix = w * h;
        let c = sv.channels;
        assert_eq!(images.len(), c, "one image per channel");
        for img in &images {
            assert_eq!(img.len(), npix * n_ch);
        }
        let mut data = vec![0.0; npix * n_ch];
        for px in 0..npix {
            for n in 0..c {
                let p = self.nodes[vol.0].data[px * c + n];
                if p != 0.0 {
                    for ch in 0..n_ch {
                        data[px * n_ch + ch] += p * images[n][px * n_ch + ch];
                    }
                }
            }
        }
        let shape = Shape {
            width: w,
            height: h,
            channels: n_ch,
        };
        let needs = self.needs_grad(vol);
        let out = self.push(data, shape, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let gv = grads.buf(vol, npix * c);
                for px in 0..npix {
                    for n in 0..c {
                        let mut acc = 0.0;
                        for ch in 0..n_ch {
                            acc += go[px * n_ch + ch] * images[n][px * n_ch + ch];
                        }
                        gv[px * c + n] += acc;
                    }
                }
            }));
        }
        out
    }

    // ── Differential and filtering operations ──────────────────────────

    /// Forward difference along x; last column 0. Single-channel fields.
    pub fn diff_x(&mut self, a: VarId) -> Result<VarId> {
        let sa = self.shape(a);
        assert_eq!(sa.channels, 1);
        if sa.width < 2 {
            return Err(Error::DimensionTooSmall("diff_x needs width >= 2".into()));
        }
        let (w, h) = (sa.width, sa.height);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w - 1 {
                data[y * w + x] = src[y * w + x + 1] - src[y * w + x];
            }
        }
        let needs = self.needs_grad(a);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, w * h);
                for y in 0..h {
                    for x in 0..w - 1 {
                        let g = go[y * w + x];
                        ga[y * w + x + 1] += g;
                        ga[y * w + x] -= g;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Forward difference along y; last row 0.
    pub fn diff_y(&mut self, a: VarId) -> Result<VarId> {
        let sa = self.shape(a);
        assert_eq!(sa.channels, 1);
        if sa.height < 2 {
            return Err(Error::DimensionTooSmall("diff_y needs height >= 2".into()));
        }
        let (w, h) = (sa.width, sa.height);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; w * h];
        for y in 0..h - 1 {
            for x in 0..w {
                data[y * w + x] = src[(y + 1) * w + x] - src[y * w + x];
            }
        }
        let needs = self.needs_grad(a);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, w * h);
                for y in 0..h - 1 {
                    for x in 0..w {
                        let g = go[y * w + x];
                        ga[(y + 1) * w + x] += g;
                        ga[y * w + x] -= g;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// 3×3 box mean over the in-frame neighborhood (count-normalized at
    /// borders). Single-channel fields.
    pub fn box3_mean(&mut self, a: VarId) -> VarId {
        let sa = self.shape(a);
        assert_eq!(sa.channels, 1);
        let (w, h) = (sa.width, sa.height);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut count = 0.0;
                for_neighborhood3(x, y, w, h, |nx, ny| {
                    acc += src[ny * w + nx];
                    count += 1.0;
                });
                data[y * w + x] = acc / count;
            }
        }
        let needs = self.needs_grad(a);
        let out = self.push(data, sa, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, w * h);
                for y in 0..h {
                    for x in 0..w {
                        let g = go[y * w + x];
                        if g == 0.0 {
                            continue;
                        }
                        let mut count = 0.0;
                        for_neighborhood3(x, y, w, h, |_, _| count += 1.0);
                        let share = g / count;
                        for_neighborhood3(x, y, w, h, |nx, ny| {
                            ga[ny * w + nx] += share;
                        });
                    }
                }
            }));
        }
        out
    }

    /// 2×2 average pooling (count-normalized on odd edges); halves each
    /// spatial dimension, rounding up.
    pub fn avg_pool2(&mut self, a: VarId) -> VarId {
        let sa = self.shape(a);
        assert_eq!(sa.channels, 1);
        let (w, h) = (sa.width, sa.height);
        let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; ow * oh];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (x, y) = (ox * 2 + dx, oy * 2 + dy);
                        if x < w && y < h {
                            acc += src[y * w + x];
                            count += 1.0;
                        }
                    }
                }
                data[oy * ow + ox] = acc / count;
            }
        }
        let shape = Shape {
            width: ow,
            height: oh,
            channels: 1,
        };
        let needs = self.needs_grad(a);
        let out = self.push(data, shape, needs);
        if needs {
            self.record(Box::new(move |_, grads| {
                let Some(go) = grads.take(out) else { return };
                let ga = grads.buf(a, w * h);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = go[oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        let mut count = 0.0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                if ox * 2 + dx < w && oy * 2 + dy < h {
                                    count += 1.0;
                                }
                            }
                        }
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (x, y) = (ox * 2 + dx, oy * 2 + dy);
                                if x < w && y < h {
                                    ga[y * w + x] += g / count;
                                }
                            }
                        }
                    }
                }
            }));
        }
        out
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Seed the scalar terminal with 1 and replay every VJP in reverse
    /// execution order. Returns gradients for all registered parameters.
    pub fn backward(&self, output: VarId) -> Result<Gradients> {
        if self.ops.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.shape(output) != Shape::scalar() {
            return Err(Error::NonScalarTerminal);
        }
        let mut grads = GradStore {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
        };
        grads.grads[output.0] = Some(vec![1.0]);
        for op in self.ops.iter().rev() {
            op(&self.nodes, &mut grads);
        }
        let mut map = HashMap::new();
        for &p in &self.params {
            let g = grads
                .take(p)
                .unwrap_or_else(|| vec![0.0; self.nodes[p.0].data.len()]);
            map.insert(p, g);
        }
        Ok(Gradients { map })
    }
}

/// 1-D bilinear sample along x in row `y`; returns (value, d value / d xs).
fn sample_x(
    data: &[f64],
    width: usize,
    channels: usize,
    ch: usize,
    y: usize,
    xs: f64,
    fill: f64,
) -> (f64, f64) {
    let x0f = xs.floor();
    let frac = xs - x0f;
    let x0 = x0f as i64;
    let at = |xi: i64| -> f64 {
        if xi >= 0 && (xi as usize) < width {
            data[(y * width + xi as usize) * channels + ch]
        } else {
            fill
        }
    };
    if x0 < -1 || x0 >= width as i64 {
        return (fill, 0.0);
    }
    let v0 = at(x0);
    let v1 = at(x0 + 1);
    ((1.0 - frac) * v0 + frac * v1, v1 - v0)
}

/// Adjoint of [`sample_x`] w.r.t. the sampled buffer.
fn scatter_x(grad: &mut [f64], width: usize, channels: usize, ch: usize, y: usize, xs: f64, g: f64) {
    let x0f = xs.floor();
    let frac = xs - x0f;
    let x0 = x0f as i64;
    for (xi, w) in [(x0, 1.0 - frac), (x0 + 1, frac)] {
        if w != 0.0 && xi >= 0 && (xi as usize) < width {
            grad[(y * width + xi as usize) * channels + ch] += g * w;
        }
    }
}

fn for_neighborhood3(x: usize, y: usize, w: usize, h: usize, mut f: impl FnMut(usize, usize)) {
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                f(nx as usize, ny as usize);
            }
        }
    }
}
