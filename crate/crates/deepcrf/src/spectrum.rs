//! Subcarrier layout and the small fixed-size transforms the pipeline needs.
//!
//! The 20 MHz legacy OFDM format occupies 52 of 64 bins: subcarrier offsets
//! -26..-1 and +1..+26 (DC and the guard band are null). Active bins are
//! stored in that order throughout the crate.

use num_complex::Complex64;

pub const NUM_SUBCARRIERS: usize = 52;
pub const GRID_SIZE: usize = 64;

/// Subcarrier frequency offset of active-bin index `i` (0..52), in -26..=26
/// with 0 excluded.
pub fn subcarrier_offset(i: usize) -> i32 {
    debug_assert!(i < NUM_SUBCARRIERS);
    if i < 26 {
        i as i32 - 26
    } else {
        i as i32 - 25
    }
}

/// Frequency response of a tapped delay line at the 52 active bins of the
/// 64-point grid: `h[k] = sum_l g_l * exp(-j 2 pi k d_l / 64)`.
pub fn taps_to_active_bins(taps: &[(usize, Complex64)]) -> [Complex64; 52] {
    let mut out = [Complex64::new(0.0, 0.0); 52];
    for (i, slot) in out.iter_mut().enumerate() {
        let k = subcarrier_offset(i) as f64;
        for &(delay, gain) in taps {
            let phase = -2.0 * std::f64::consts::PI * k * delay as f64 / GRID_SIZE as f64;
            *slot += gain * Complex64::from_polar(1.0, phase);
        }
    }
    out
}

/// Analysis transform of the 52-bin signal space: "virtual taps" of a vector
/// on the active bins. A flat (constant) spectrum maps to a single impulse at
/// virtual delay 0.
pub fn active_bins_to_virtual_taps(x: &[Complex64; 52]) -> [Complex64; 52] {
    let n = NUM_SUBCARRIERS as f64;
    let mut t = [Complex64::new(0.0, 0.0); 52];
    for (tap, slot) in t.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * (i * tap) as f64 / n;
            acc += v * Complex64::from_polar(1.0, phase);
        }
        *slot = acc / n;
    }
    t
}

/// Synthesis transform inverse to [`active_bins_to_virtual_taps`].
pub fn virtual_taps_to_active_bins(t: &[Complex64; 52]) -> [Complex64; 52] {
    let n = NUM_SUBCARRIERS as f64;
    let mut x = [Complex64::new(0.0, 0.0); 52];
    for (i, slot) in x.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (tap, &v) in t.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (i * tap) as f64 / n;
            acc += v * Complex64::from_polar(1.0, phase);
        }
        *slot = acc;
    }
    x
}

/// Deterministic seed derivation for independent substreams: splitmix64 of
/// the base seed xored with a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_cover_the_legacy_layout() {
        assert_eq!(subcarrier_offset(0), -26);
        assert_eq!(subcarrier_offset(25), -1);
        assert_eq!(subcarrier_offset(26), 1);
        assert_eq!(subcarrier_offset(51), 26);
        let all: Vec<i32> = (0..52).map(subcarrier_offset).collect();
        assert!(!all.contains(&0));
        assert_eq!(all.len(), 52);
    }

    #[test]
    fn unit_tap_gives_flat_response() {
        let resp = taps_to_active_bins(&[(0, Complex64::new(1.0, 0.0))]);
        for v in resp {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn virtual_transform_roundtrip() {
        let mut x = [Complex64::new(0.0, 0.0); 52];
        for (i, v) in x.iter_mut().enumerate() {
            *v = Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos());
        }
        let t = active_bins_to_virtual_taps(&x);
        let back = virtual_taps_to_active_bins(&t);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn flat_spectrum_is_a_single_virtual_impulse() {
        let x = [Complex64::new(2.5, -1.0); 52];
        let t = active_bins_to_virtual_taps(&x);
        assert!((t[0] - Complex64::new(2.5, -1.0)).norm() < 1e-12);
        for v in &t[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
