//! Model-based fingerprint extraction baselines and the inter/intra-class
//! distance study.
//!
//! The signal-space (SS) method works in the 52-bin active-subcarrier signal
//! space: a vector on the active bins is transformed to "virtual taps"
//! (see [`crate::spectrum`]), the channel estimate is the energy in a
//! centered cyclic window of `gate_taps` taps (smooth channel and transmit
//! filter responses concentrate there; a flat channel is exactly the tap-0
//! impulse), and the fingerprint estimate is `csi ./ h_hat - 1`. Multipath
//! pushes channel energy outside the window, which is exactly the regime
//! where the method degrades.
//!
//! The DWT method assumes channel structure lives in the low-frequency
//! (approximation) coefficients: it zeroes the coarsest approximation of a
//! multi-level wavelet decomposition of the real and imaginary parts and
//! returns the reconstruction.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::Subcarriers52;
use crate::spectrum::{active_bins_to_virtual_taps, virtual_taps_to_active_bins, NUM_SUBCARRIERS};
use crate::stats::{box_stats, BoxStats};
use crate::wavelet::{wavedec, waverec, Wavelet};

pub const DEFAULT_GATE_TAPS: usize = 8;
pub const DEFAULT_DWT_LEVEL: usize = 3;

/// Floor applied to |h_hat| before division (deep fades would otherwise blow
/// up the estimate).
pub const ILL_CONDITION_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionMethod {
    Ss,
    Dwt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub method: ExtractionMethod,
    /// SS channel-tap window size.
    pub gate_taps: usize,
    pub wavelet: &'static str,
    pub dwt_level: usize,
    /// Error out on ill-conditioned bins instead of flooring.
    pub strict: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            method: ExtractionMethod::Ss,
            gate_taps: DEFAULT_GATE_TAPS,
            wavelet: "db4",
            dwt_level: DEFAULT_DWT_LEVEL,
            strict: false,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.gate_taps) {
            return Err(Error::InvalidInput(format!(
                "gate_taps must be in 1..=32, got {}",
                self.gate_taps
            )));
        }
        if self.dwt_level == 0 {
            return Err(Error::InvalidInput("dwt_level must be >= 1".into()));
        }
        self.wavelet_bank()?;
        Ok(())
    }

    pub fn wavelet_bank(&self) -> Result<Wavelet> {
        match self.wavelet {
            "db4" => Ok(Wavelet::db4()),
            "haar" => Ok(Wavelet::haar()),
            other => Err(Error::InvalidInput(format!("unknown wavelet {:?}", other))),
        }
    }
}

/// Membership mask of the centered cyclic gate window: taps
/// `0..ceil(L/2)` and `52-floor(L/2)..52`.
pub fn ss_gate_mask(gate_taps: usize) -> [bool; NUM_SUBCARRIERS] {
    let head = gate_taps.div_ceil(2);
    let tail = gate_taps / 2;
    let mut mask = [false; NUM_SUBCARRIERS];
    for (i, m) in mask.iter_mut().enumerate() {
        *m = i < head || i >= NUM_SUBCARRIERS - tail;
    }
    mask
}

/// Signal-space fingerprint estimate with the default floor on
/// ill-conditioned bins.
pub fn extract_ss(csi: &Subcarriers52, gate_taps: usize) -> Result<Subcarriers52> {
    extract_ss_with(csi, gate_taps, false)
}

/// Signal-space fingerprint estimate; `strict` turns floored bins into an
/// [`Error::IllConditionedBins`] listing the offenders.
pub fn extract_ss_with(
    csi: &Subcarriers52,
    gate_taps: usize,
    strict: bool,
) -> Result<Subcarriers52> {
    if !(1..=32).contains(&gate_taps) {
        return Err(Error::InvalidInput(format!(
            "gate_taps must be in 1..=32, got {}",
            gate_taps
        )));
    }
    let mut taps = active_bins_to_virtual_taps(csi.values());
    let mask = ss_gate_mask(gate_taps);
    for (t, keep) in taps.iter_mut().zip(mask) {
        if !keep {
            *t = Complex64::new(0.0, 0.0);
        }
    }
    let h_hat = virtual_taps_to_active_bins(&taps);

    let mut bad_bins = Vec::new();
    let mut estimate = [Complex64::new(0.0, 0.0); NUM_SUBCARRIERS];
    for (k, slot) in estimate.iter_mut().enumerate() {
        let mut h = h_hat[k];
        if h.norm() < ILL_CONDITION_FLOOR {
            bad_bins.push(k);
            let phase = if h.norm() == 0.0 { 0.0 } else { h.arg() };
            h = Complex64::from_polar(ILL_CONDITION_FLOOR, phase);
        }
        *slot = csi[k] / h - Complex64::new(1.0, 0.0);
    }
    if !bad_bins.is_empty() {
        if strict {
            return Err(Error::IllConditionedBins {
                bins: bad_bins,
                floor: ILL_CONDITION_FLOOR,
            });
        }
        log::warn!(
            "extract_ss: floored {} ill-conditioned bins: {:?}",
            bad_bins.len(),
            bad_bins
        );
    }
    Subcarriers52::new(estimate)
}

/// Wavelet-subspace fingerprint estimate: zero the coarsest approximation of
/// real and imaginary parts, reconstruct.
pub fn extract_dwt(csi: &Subcarriers52, cfg: &ExtractionConfig) -> Result<Subcarriers52> {
    cfg.validate()?;
    let bank = cfg.wavelet_bank()?;
    let re: Vec<f64> = csi.iter().map(|v| v.re).collect();
    let im: Vec<f64> = csi.iter().map(|v| v.im).collect();
    let strip = |x: &[f64]| -> Result<Vec<f64>> {
        let mut dec = wavedec(x, &bank, cfg.dwt_level)?;
        dec.approx.iter_mut().for_each(|v| *v = 0.0);
        Ok(waverec(&dec, &bank))
    };
    let re_out = strip(&re)?;
    let im_out = strip(&im)?;
    Subcarriers52::from_fn(|k| Complex64::new(re_out[k], im_out[k]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassPair {
    Intra,
    Inter,
}

/// Box-plot summary of pairwise Euclidean distances for one class pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceStats {
    pub class_pair: ClassPair,
    pub stats: BoxStats,
    pub count: usize,
}

impl DistanceStats {
    /// One structured-text row: pair, quartiles, whiskers, outlier count.
    pub fn to_row(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            match self.class_pair {
                ClassPair::Intra => "intra",
                ClassPair::Inter => "inter",
            },
            self.count,
            self.stats.q1,
            self.stats.median,
            self.stats.q3,
            self.stats.whisker_lo,
            self.stats.whisker_hi,
            self.stats.outliers.len()
        )
    }
}

/// Pairwise Euclidean distances (concatenated real/imag parts) split into
/// intra-class and inter-class statistics.
pub fn distance_study(fingerprints: &[(u16, Subcarriers52)]) -> Result<Vec<DistanceStats>> {
    let mut per_class = std::collections::BTreeMap::<u16, usize>::new();
    for (label, _) in fingerprints {
        *per_class.entry(*label).or_insert(0) += 1;
    }
    if per_class.len() < 2 {
        return Err(Error::InvalidInput(
            "distance_study needs at least 2 classes".into(),
        ));
    }
    if let Some((label, _)) = per_class.iter().find(|(_, &n)| n < 2) {
        return Err(Error::InvalidInput(format!(
            "distance_study needs >= 2 samples per class; class {} is short",
            label
        )));
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..fingerprints.len() {
        for j in (i + 1)..fingerprints.len() {
            let d = fingerprints[i].1.distance(&fingerprints[j].1);
            if fingerprints[i].0 == fingerprints[j].0 {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    Ok(vec![
        DistanceStats {
            class_pair: ClassPair::Intra,
            stats: box_stats(&intra),
            count: intra.len(),
        },
        DistanceStats {
            class_pair: ClassPair::Inter,
            stats: box_stats(&inter),
            count: inter.len(),
        },
    ])
}
