//! Dense 2-D field and channel-volume containers plus the sampling and
//! differential operators the rest of the pipeline is built from.
//!
//! Layout is row-major with the channel index innermost, so the per-pixel
//! channel vector of a [`ChannelVolume`] is contiguous.

use crate::error::{Error, Result};

/// H×W grid of real values. Units depend on role: meters for depth,
/// pixels for disparity, dimensionless for masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "field data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("non-finite field value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_size(&self, other: &ScalarField) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> ScalarField {
        ScalarField::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }
}

/// H×W×N stack of scalar fields, channel-innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVolume {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ChannelVolume {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "volume data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("non-finite volume value".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, x: usize, y: usize, n: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + n]
    }

    pub fn set(&mut self, x: usize, y: usize, n: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + n] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Extract channel `n` as a field.
    pub fn channel(&self, n: usize) -> ScalarField {
        ScalarField::from_fn(self.width, self.height, |x, y| self.get(x, y, n))
    }

    /// Per-pixel sum over channels.
    pub fn channel_sum(&self) -> ScalarField {
        ScalarField::from_fn(self.width, self.height, |x, y| {
            (0..self.channels).map(|n| self.get(x, y, n)).sum()
        })
    }

    /// True when every per-pixel channel sum is 1 within `tol` and all
    /// entries are nonnegative.
    pub fn is_probability(&self, tol: f64) -> bool {
        if self.data.iter().any(|&v| v < 0.0) {
            return false;
        }
        self.channel_sum().data().iter().all(|&s| (s - 1.0).abs() <= tol)
    }
}

/// H×W×3 image with values in [0,1]; clamped on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionTooSmall("empty image".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "image data length {} != {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("non-finite image value".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + ch]
    }

    pub fn set(&mut self, x: usize, y: usize, ch: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + ch] = v.clamp(0.0, 1.0);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> ScalarField {
        ScalarField::from_fn(self.width, self.height, |x, y| self.get(x, y, ch))
    }

    pub fn same_size(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let sx = self.width - 1 - x;
                for ch in 0..3 {
                    data.push(self.get(sx, y, ch));
                }
            }
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Bilinear sample with the zero-fill convention: coordinates outside
/// [0,W−1]×[0,H−1] contribute 0. Exact at integer coordinates.
pub fn bilinear_sample(field: &ScalarField, x: f64, y: f64) -> f64 {
    bilinear_sample_raw(
        field.data(),
        field.width(),
        field.height(),
        1,
        0,
        x,
        y,
        0.0,
    )
}

/// Shared bilinear kernel over an interleaved buffer; `fill` is the value
/// assumed outside the frame.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bilinear_sample_raw(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    ch: usize,
    x: f64,
    y: f64,
    fill: f64,
) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = x - x0;
    let wy = y - y0;
    let mut acc = 0.0;
    for (dy, wgt_y) in [(0i64, 1.0 - wy), (1, wy)] {
        for (dx, wgt_x) in [(0i64, 1.0 - wx), (1, wx)] {
            let w = wgt_x * wgt_y;
            if w == 0.0 {
                continue;
            }
            let xi = x0 as i64 + dx;
            let yi = y0 as i64 + dy;
            let v = if xi >= 0 && yi >= 0 && (xi as usize) < width && (yi as usize) < height {
                data[(yi as usize * width + xi as usize) * channels + ch]
            } else {
                fill
            };
            acc += w * v;
        }
    }
    acc
}

/// Horizontal resample: output(x,y) = bilinear_sample(field, x + shift, y).
///
/// Positive `shift` follows the T2 convention (sampling the left view at
/// p + [d_n, 0] synthesizes the right view); negate the shift for the
/// reverse direction.
pub fn horizontal_shift(field: &ScalarField, shift: f64) -> ScalarField {
    ScalarField::from_fn(field.width(), field.height(), |x, y| {
        bilinear_sample(field, x as f64 + shift, y as f64)
    })
}

/// Per-pixel channel softmax, max-subtracted for stability. The result is
/// a valid probability volume.
pub fn softmax_channels(volume: &ChannelVolume) -> ChannelVolume {
    let mut out = volume.clone();
    let c = volume.channels();
    for px in out.data_mut().chunks_mut(c) {
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
    out
}

/// Forward difference f(x+1)−f(x); last column 0.
pub fn diff_x(field: &ScalarField) -> Result<ScalarField> {
    if field.width() < 2 {
        return Err(Error::DimensionTooSmall("diff_x needs width >= 2".into()));
    }
    Ok(ScalarField::from_fn(field.width(), field.height(), |x, y| {
        if x + 1 < field.width() {
            field.get(x + 1, y) - field.get(x, y)
        } else {
            0.0
        }
    }))
}

/// Forward difference f(y+1)−f(y); last row 0.
pub fn diff_y(field: &ScalarField) -> Result<ScalarField> {
    if field.height() < 2 {
        return Err(Error::DimensionTooSmall("diff_y needs height >= 2".into()));
    }
    Ok(ScalarField::from_fn(field.width(), field.height(), |x, y| {
        if y + 1 < field.height() {
            field.get(x, y + 1) - field.get(x, y)
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bilinear_identity_at_grid_points() {
        let f = ScalarField::from_fn(5, 4, |x, y| (x * 10 + y) as f64);
        assert_eq!(bilinear_sample(&f, 3.0, 2.0), f.get(3, 2));
    }

    #[test]
    fn bilinear_midpoint_on_edge() {
        let mut f = ScalarField::constant(2, 1, 0.0);
        f.set(1, 0, 1.0);
        assert_eq!(bilinear_sample(&f, 0.5, 0.0), 0.5);
    }

    #[test]
    fn bilinear_zero_fill_out_of_range() {
        let f = ScalarField::constant(4, 4, 7.0);
        assert_eq!(bilinear_sample(&f, -1.0, 0.0), 0.0);
        assert_eq!(bilinear_sample(&f, 0.0, 4.5), 0.0);
    }

    #[test]
    fn shift_zero_is_identity() {
        let f = ScalarField::from_fn(6, 3, |x, y| (x + 7 * y) as f64);
        assert_eq!(horizontal_shift(&f, 0.0), f);
    }

    #[test]
    fn shift_integer_remaps_ramp() {
        let f = ScalarField::from_fn(6, 2, |x, _| x as f64);
        let s = horizontal_shift(&f, 2.0);
        for y in 0..2 {
            for x in 0..4 {
                assert_eq!(s.get(x, y), (x + 2) as f64);
            }
            // newly exposed columns
            assert_eq!(s.get(4, y), 0.0);
            assert_eq!(s.get(5, y), 0.0);
        }
    }

    #[test]
    fn shift_past_width_is_zero() {
        let f = ScalarField::constant(4, 2, 3.0);
        let s = horizontal_shift(&f, 10.0);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_logits() {
        let v = ChannelVolume::constant(2, 2, 4, 1.3);
        let p = softmax_channels(&v);
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_hand_case() {
        let v = ChannelVolume::new(1, 1, 2, vec![0.0, 3.0_f64.ln()]).unwrap();
        let p = softmax_channels(&v);
        assert!((p.get(0, 0, 0) - 0.25).abs() < 1e-14);
        assert!((p.get(0, 0, 1) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn softmax_extreme_logit_is_stable() {
        let v = ChannelVolume::new(1, 1, 3, vec![1e4, 0.0, 0.0]).unwrap();
        let p = softmax_channels(&v);
        assert!((p.get(0, 0, 0) - 1.0).abs() < 1e-12);
        assert!(p.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn diff_x_ramp() {
        let f = ScalarField::from_fn(5, 2, |x, _| 3.0 * x as f64);
        let d = diff_x(&f).unwrap();
        for y in 0..2 {
            for x in 0..4 {
                assert_eq!(d.get(x, y), 3.0);
            }
            assert_eq!(d.get(4, y), 0.0);
        }
    }

    #[test]
    fn diff_constant_is_zero() {
        let f = ScalarField::constant(4, 4, 2.5);
        assert!(diff_x(&f).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(diff_y(&f).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diff_x_rejects_one_column() {
        let f = ScalarField::constant(1, 4, 0.0);
        assert!(diff_x(&f).is_err());
    }

    #[test]
    fn rgb_clamps_on_construction() {
        let img = RgbImage::new(1, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
    }

    proptest! {
        #[test]
        fn softmax_is_probability(data in proptest::collection::vec(-20.0..20.0f64, 3 * 4 * 5)) {
            let v = ChannelVolume::new(3, 4, 5, data).unwrap();
            let p = softmax_channels(&v);
            prop_assert!(p.is_probability(1e-6));
        }

        #[test]
        fn softmax_shift_invariant(
            data in proptest::collection::vec(-5.0..5.0f64, 2 * 2 * 3),
            c in -10.0..10.0f64,
        ) {
            let v = ChannelVolume::new(2, 2, 3, data.clone()).unwrap();
            let shifted = ChannelVolume::new(2, 2, 3, data.iter().map(|x| x + c).collect()).unwrap();
            let a = softmax_channels(&v);
            let b = softmax_channels(&shifted);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn bilinear_linear_along_edges(t in 0.0..1.0f64) {
            let f = ScalarField::from_fn(4, 1, |x, _| (x * x) as f64);
            let lerp = (1.0 - t) * f.get(1, 0) + t * f.get(2, 0);
            prop_assert!((bilinear_sample(&f, 1.0 + t, 0.0) - lerp).abs() < 1e-12);
        }

        #[test]
        fn integer_shift_equals_remap(shift in 0usize..7, data in proptest::collection::vec(0.0..1.0f64, 6 * 3)) {
            let f = ScalarField::new(6, 3, data).unwrap();
            let s = horizontal_shift(&f, shift as f64);
            for y in 0..3 {
                for x in 0..6 {
                    let expect = if x + shift < 6 { f.get(x + shift, y) } else { 0.0 };
                    prop_assert_eq!(s.get(x, y), expect);
                }
            }
        }
    }
}
