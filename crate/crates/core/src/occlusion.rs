//! Occlusion-aware masking: a probability-volume mask, a disparity-map
//! mask, and their product. Masks are detached from the tape — they act as
//! constants during backward so the optimizer cannot occlude-away hard
//! pixels.

use crate::error::{Error, Result};
use crate::field::{horizontal_shift, ChannelVolume, ScalarField};
use crate::geometry::DisparityLadder;

/// Shift channel n of the right-view probability volume by −d_n, back into
/// the left view. Mass shifted out of frame does not return, so border
/// pixels end up with channel sums below 1.
pub fn cyclic_volume(v_p_r: &ChannelVolume, ladder: &DisparityLadder) -> ChannelVolume {
    debug_assert_eq!(v_p_r.channels(), ladder.len());
    let mut out = ChannelVolume::constant(v_p_r.width(), v_p_r.height(), v_p_r.channels(), 0.0);
    for n in 0..v_p_r.channels() {
        let shifted = horizontal_shift(&v_p_r.channel(n), -ladder.level(n));
        for y in 0..out.height() {
            for x in 0..out.width() {
                out.set(x, y, n, shifted.get(x, y));
            }
        }
    }
    out
}

/// M_v = min(Σ_n cyc_n, 1); 0 marks pixels invisible in the right view.
pub fn mask_from_volume(cyclic: &ChannelVolume) -> ScalarField {
    cyclic.channel_sum().map(|s| s.min(1.0).max(0.0))
}

/// M_m(p) = min(min_{i=1..K} |d(p+i) − d(p) − i|, 1), scanning right
/// neighbors up to the image border. A pixel whose disparity gap matches
/// the coordinate gap exactly is occluded (mask 0). The rightmost column
/// has no neighbors and stays visible.
pub fn mask_from_disparity(d_c: &ScalarField, k: usize) -> Result<ScalarField> {
    if k < 1 {
        return Err(Error::InvalidRange("neighbor horizon K must be >= 1".into()));
    }
    let w = d_c.width();
    Ok(ScalarField::from_fn(w, d_c.height(), |x, y| {
        let mut best = f64::INFINITY;
        for i in 1..=k {
            if x + i >= w {
                break;
            }
            let gap = (d_c.get(x + i, y) - d_c.get(x, y) - i as f64).abs();
            best = best.min(gap);
        }
        best.min(1.0)
    }))
}

/// M_occ = M_v ⊙ M_m.
pub fn combine(m_v: &ScalarField, m_m: &ScalarField) -> Result<ScalarField> {
    if !m_v.same_size(m_m) {
        return Err(Error::DimensionMismatch(
            "mask sizes differ in combine".into(),
        ));
    }
    Ok(ScalarField::from_fn(m_v.width(), m_v.height(), |x, y| {
        m_v.get(x, y) * m_m.get(x, y)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cyclic_inverse_on_integer_one_hot() {
        let ladder = DisparityLadder::discretize(1.0, 4.0, 3).unwrap();
        // levels are 4, 2, 1 — all integers
        assert!(ladder.levels().iter().all(|d| d.fract() == 0.0));
        let w = 10;
        let mut vol = ChannelVolume::constant(w, 2, 3, 0.0);
        for y in 0..2 {
            for x in 0..w {
                vol.set(x, y, (x + y) % 3, 1.0);
            }
        }
        // forward shift by +d_n, then back by −d_n
        let mut fwd = ChannelVolume::constant(w, 2, 3, 0.0);
        for n in 0..3 {
            let s = horizontal_shift(&vol.channel(n), ladder.level(n));
            for y in 0..2 {
                for x in 0..w {
                    fwd.set(x, y, n, s.get(x, y));
                }
            }
        }
        let back = cyclic_volume(&fwd, &ladder);
        for n in 0..3 {
            let d = ladder.level(n) as usize;
            for y in 0..2 {
                // in-range pixels: x + d < w survives the round trip
                for x in 0..w - d {
                    assert_eq!(back.get(x + d, y, n), vol.get(x + d, y, n));
                }
            }
        }
    }

    #[test]
    fn zero_disparity_cyclic_is_identity() {
        let ladder = DisparityLadder::discretize(1e-12, 1e-11, 2).unwrap();
        let mut vol = ChannelVolume::constant(4, 2, 2, 0.0);
        for (i, v) in vol.data_mut().iter_mut().enumerate() {
            *v = (i % 5) as f64 * 0.2;
        }
        let back = cyclic_volume(&vol, &ladder);
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn border_mass_is_lost() {
        // 8-pixel row, single-hot volume, shift 3: the 3 rightmost pixels
        // of the forward volume drew from out of frame, and shifting back
        // loses the 3 leftmost.
        let ladder = DisparityLadder::discretize(1.0, 3.0, 2).unwrap();
        assert_eq!(ladder.level(0), 3.0);
        let mut vol = ChannelVolume::constant(8, 1, 2, 0.0);
        for x in 0..8 {
            vol.set(x, 0, 0, 1.0);
        }
        let mut fwd = ChannelVolume::constant(8, 1, 2, 0.0);
        for n in 0..2 {
            let s = horizontal_shift(&vol.channel(n), ladder.level(n));
            for x in 0..8 {
                fwd.set(x, 0, n, s.get(x, 0));
            }
        }
        let back = cyclic_volume(&fwd, &ladder);
        let sums = back.channel_sum();
        // the 3 left columns drew from out of frame: their mass is gone
        for x in 0..3 {
            assert_eq!(sums.get(x, 0), 0.0);
        }
        for x in 3..8 {
            assert_eq!(sums.get(x, 0), 1.0);
        }
    }

    #[test]
    fn volume_mask_hand_values() {
        let mut vol = ChannelVolume::constant(3, 1, 2, 0.0);
        vol.set(1, 0, 0, 0.6);
        vol.set(2, 0, 0, 0.9);
        vol.set(2, 0, 1, 0.5);
        let m = mask_from_volume(&vol);
        assert_eq!(m.get(0, 0), 0.0);
        assert!((m.get(1, 0) - 0.6).abs() < 1e-15);
        assert_eq!(m.get(2, 0), 1.0);
    }

    #[test]
    fn disparity_mask_exact_occluder() {
        // neighbor at i = 2 with d(p_i) = d(p) + 2 occludes p
        let mut d = ScalarField::constant(6, 1, 5.0);
        d.set(2, 0, 7.0);
        let m = mask_from_disparity(&d, 41).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn disparity_mask_constant_field_is_visible() {
        let d = ScalarField::constant(6, 2, 12.0);
        let m = mask_from_disparity(&d, 41).unwrap();
        // min_i |−i| = 1 at i = 1
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disparity_mask_rightmost_column_visible() {
        let d = ScalarField::from_fn(4, 1, |x, _| x as f64);
        let m = mask_from_disparity(&d, 3).unwrap();
        assert_eq!(m.get(3, 0), 1.0);
    }

    #[test]
    fn combine_hand_values() {
        let a = ScalarField::new(2, 1, vec![1.0, 0.5]).unwrap();
        let b = ScalarField::new(2, 1, vec![1.0, 0.5]).unwrap();
        let c = combine(&a, &b).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(1, 0), 0.25);
        let z = ScalarField::constant(2, 1, 0.0);
        assert!(combine(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combine_rejects_size_mismatch() {
        let a = ScalarField::constant(2, 2, 1.0);
        let b = ScalarField::constant(3, 2, 1.0);
        assert!(combine(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn masks_stay_in_unit_range(
            data in proptest::collection::vec(0.0..2.0f64, 6 * 2 * 3),
            disp in proptest::collection::vec(0.0..20.0f64, 6 * 2),
        ) {
            let vol = ChannelVolume::new(6, 2, 3, data).unwrap();
            let m_v = mask_from_volume(&vol);
            prop_assert!(m_v.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let d = ScalarField::new(6, 2, disp).unwrap();
            let m_m = mask_from_disparity(&d, 5).unwrap();
            prop_assert!(m_m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let occ = combine(&m_v, &m_m).unwrap();
            for ((&o, &a), &b) in occ.data().iter().zip(m_v.data()).zip(m_m.data()) {
                prop_assert!(o <= a.min(b) + 1e-15);
            }
        }
    }
}
