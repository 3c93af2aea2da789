//! Orthogonal discrete wavelet transform with symmetric (half-point) boundary
//! extension, at arbitrary signal lengths.
//!
//! The forward step extends the signal by `filter_len - 1` samples on each
//! side, convolves and keeps every second sample of the central segment; the
//! inverse zero-upsamples, convolves with the synthesis filters and crops the
//! centered original length. With orthogonal filter banks this round-trips
//! exactly (the boundary-extended representation is redundant), which the
//! tests pin at 1e-10.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub name: &'static str,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl Wavelet {
    /// Build the four-filter bank from scaling coefficients.
    fn from_scaling(name: &'static str, rec_lo: &[f64]) -> Self {
        let f = rec_lo.len();
        let dec_lo: Vec<f64> = rec_lo.iter().rev().copied().collect();
        let rec_hi: Vec<f64> = (0..f)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * rec_lo[f - 1 - k]
            })
            .collect();
        let dec_hi: Vec<f64> = rec_hi.iter().rev().copied().collect();
        Wavelet {
            name,
            dec_lo,
            dec_hi,
            rec_lo: rec_lo.to_vec(),
            rec_hi,
        }
    }

    /// Daubechies wavelet with 4 vanishing moments (8 taps).
    pub fn db4() -> Self {
        Wavelet::from_scaling(
            "db4",
            &[
                0.230_377_813_308_855_23,
                0.714_846_570_552_541_5,
                0.630_880_767_929_590_4,
                -0.027_983_769_416_983_85,
                -0.187_034_811_718_881_14,
                0.030_841_381_835_986_965,
                0.032_883_011_666_982_945,
                -0.010_597_401_784_997_278,
            ],
        )
    }

    pub fn haar() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Wavelet::from_scaling("haar", &[s, s])
    }

    pub fn filter_len(&self) -> usize {
        self.rec_lo.len()
    }
}

/// Symmetric half-point extension: `... x1 x0 | x0 x1 ... xn-1 | xn-1 xn-2 ...`
fn extend_symmetric(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        ext.push(x[(pad - 1 - i).min(n - 1)]);
    }
    ext.extend_from_slice(x);
    for i in 0..pad {
        ext.push(x[n - 1 - i.min(n - 1)]);
    }
    ext
}

fn analysis(ext: &[f64], filter: &[f64], out_len: usize, k0: usize) -> Vec<f64> {
    (0..out_len)
        .map(|i| {
            let k = k0 + 2 * i + 1;
            let mut acc = 0.0;
            for (t, &ft) in filter.iter().enumerate() {
                // full convolution: c[k] = sum_t f[t] * ext[k - t]
                if k >= t && k - t < ext.len() {
                    acc += ft * ext[k - t];
                }
            }
            acc
        })
        .collect()
}

/// One decomposition level: `(approx, detail)`, each of length
/// `(n + filter_len - 1) / 2`.
pub fn dwt_single(x: &[f64], w: &Wavelet) -> (Vec<f64>, Vec<f64>) {
    let f = w.filter_len();
    let n = x.len();
    let out_len = (n + f - 1) / 2;
    let ext = extend_symmetric(x, f - 1);
    let k0 = f - 1;
    (
        analysis(&ext, &w.dec_lo, out_len, k0),
        analysis(&ext, &w.dec_hi, out_len, k0),
    )
}

fn upsample_convolve(coeffs: &[f64], filter: &[f64]) -> Vec<f64> {
    // Zero-upsample (even positions) then full convolution.
    let m = coeffs.len();
    let f = filter.len();
    let mut out = vec![0.0; 2 * m + f - 1];
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (t, &ft) in filter.iter().enumerate() {
            out[2 * i + t] += c * ft;
        }
    }
    out
}

/// Inverse of one level back to `out_len` samples.
pub fn idwt_single(approx: &[f64], detail: &[f64], w: &Wavelet, out_len: usize) -> Vec<f64> {
    debug_assert_eq!(approx.len(), detail.len());
    let mut full = upsample_convolve(approx, &w.rec_lo);
    for (o, v) in full.iter_mut().zip(upsample_convolve(detail, &w.rec_hi)) {
        *o += v;
    }
    // Analysis placed the filter at extended offset 2i+1, so original sample 0
    // (extended index filter_len-1) sits at upsampled index filter_len-2.
    let start = w.filter_len() - 2;
    full[start..start + out_len].to_vec()
}

/// Multi-level decomposition. Details are stored finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    /// `details[0]` is level 1 (finest).
    pub details: Vec<Vec<f64>>,
    /// Input length at each level, used to crop during reconstruction.
    lengths: Vec<usize>,
}

/// Largest usable level for a signal length: each level's input must be at
/// least one filter long.
pub fn max_levels(n: usize, w: &Wavelet) -> usize {
    let f = w.filter_len();
    let mut len = n;
    let mut levels = 0;
    while len >= f {
        len = (len + f - 1) / 2;
        levels += 1;
    }
    levels
}

pub fn wavedec(x: &[f64], w: &Wavelet, levels: usize) -> Result<Decomposition> {
    if levels == 0 {
        return Err(Error::InvalidInput("wavedec: levels must be >= 1".into()));
    }
    let cap = max_levels(x.len(), w);
    if levels > cap {
        return Err(Error::InvalidInput(format!(
            "wavedec: level {} too deep for {} samples with {} ({} max)",
            levels,
            x.len(),
            w.name,
            cap
        )));
    }
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = dwt_single(&approx, w);
        details.push(d);
        approx = a;
    }
    Ok(Decomposition {
        approx,
        details,
        lengths,
    })
}

pub fn waverec(dec: &Decomposition, w: &Wavelet) -> Vec<f64> {
    let mut approx = dec.approx.clone();
    for (level, detail) in dec.details.iter().enumerate().rev() {
        approx = idwt_single(&approx, detail, w, dec.lengths[level]);
    }
    approx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(n: usize, seed: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (i as f64 * 0.7 + seed).sin() + 0.3 * (i as f64 * 2.3 - seed).cos())
            .collect()
    }

    #[test]
    fn filter_bank_identities() {
        let w = Wavelet::db4();
        let sum: f64 = w.rec_lo.iter().sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
        let energy: f64 = w.rec_lo.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-12);
        let hi_sum: f64 = w.rec_hi.iter().sum();
        assert!(hi_sum.abs() < 1e-12);
    }

    #[test]
    fn single_level_perfect_reconstruction_all_lengths() {
        for w in [Wavelet::haar(), Wavelet::db4()] {
            for n in w.filter_len()..64 {
                let x = signal(n, 1.3);
                let (a, d) = dwt_single(&x, &w);
                let back = idwt_single(&a, &d, &w, n);
                for (orig, rec) in x.iter().zip(&back) {
                    assert!(
                        (orig - rec).abs() < 1e-10,
                        "{} n={}: {} vs {}",
                        w.name,
                        n,
                        orig,
                        rec
                    );
                }
            }
        }
    }

    #[test]
    fn multi_level_perfect_reconstruction_on_52() {
        let w = Wavelet::db4();
        let x = signal(52, 0.4);
        for levels in 1..=3 {
            let dec = wavedec(&x, &w, levels).unwrap();
            let back = waverec(&dec, &w);
            assert_eq!(back.len(), 52);
            for (orig, rec) in x.iter().zip(&back) {
                assert!((orig - rec).abs() < 1e-10, "levels {}", levels);
            }
        }
    }

    #[test]
    fn too_deep_level_is_an_error() {
        let w = Wavelet::db4();
        let x = signal(52, 0.0);
        let cap = max_levels(52, &w);
        assert!(wavedec(&x, &w, cap).is_ok());
        assert!(wavedec(&x, &w, cap + 1).is_err());
        assert!(wavedec(&x, &w, 0).is_err());
    }

    #[test]
    fn constant_signal_lives_in_the_approximation() {
        let w = Wavelet::db4();
        let x = vec![3.25; 52];
        let dec = wavedec(&x, &w, 3).unwrap();
        for d in &dec.details {
            for v in d {
                assert!(v.abs() < 1e-10, "detail leakage {}", v);
            }
        }
    }
}
