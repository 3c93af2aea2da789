//! Domain types and the forward signal model.
//!
//! An estimated CSI vector is modeled as `c = h .* (1 + f) + z`: the channel
//! response `h`, a small multiplicative per-subcarrier device deviation `f`
//! (the fingerprint) and additive white Gaussian noise `z` at a configured
//! SNR. All operations are pure given their seeds.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::spectrum::{derive_seed, NUM_SUBCARRIERS};

/// Complex values on the 52 active subcarriers of the 20 MHz legacy layout,
/// ordered by offset -26..-1, +1..+26.
#[derive(Debug, Clone, PartialEq)]
pub struct Subcarriers52([Complex64; 52]);

impl Subcarriers52 {
    pub fn new(values: [Complex64; 52]) -> Result<Self> {
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidInput(
                "subcarrier vector contains non-finite components".into(),
            ));
        }
        Ok(Subcarriers52(values))
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> Complex64) -> Result<Self> {
        let mut values = [Complex64::new(0.0, 0.0); 52];
        for (i, v) in values.iter_mut().enumerate() {
            *v = f(i);
        }
        Subcarriers52::new(values)
    }

    pub fn zeros() -> Self {
        Subcarriers52([Complex64::new(0.0, 0.0); 52])
    }

    pub fn ones() -> Self {
        Subcarriers52([Complex64::new(1.0, 0.0); 52])
    }

    pub fn values(&self) -> &[Complex64; 52] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    /// Componentwise product.
    pub fn hadamard(&self, other: &Subcarriers52) -> Subcarriers52 {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.iter()) {
            *o *= b;
        }
        Subcarriers52(out)
    }

    /// Componentwise division; caller guarantees the divisor is bounded away
    /// from zero.
    pub fn hadamard_div(&self, other: &Subcarriers52) -> Subcarriers52 {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.iter()) {
            *o /= b;
        }
        Subcarriers52(out)
    }

    pub fn mean_power(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum::<f64>() / NUM_SUBCARRIERS as f64
    }

    /// Euclidean distance over concatenated real/imaginary parts.
    pub fn distance(&self, other: &Subcarriers52) -> f64 {
        self.0
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

impl std::ops::Index<usize> for Subcarriers52 {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// Per-device multiplicative deviation `f`: the fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub deviation: Subcarriers52,
    pub device_id: u16,
}

impl Fingerprint {
    /// The degenerate all-zero fingerprint (an ideal device).
    pub fn zero(device_id: u16) -> Self {
        Fingerprint {
            deviation: Subcarriers52::zeros(),
            device_id,
        }
    }
}

/// Additive noise specification, referenced to the per-record signal power.
/// `snr_db = f64::INFINITY` is the documented noiseless sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if snr_db.is_infinite() && snr_db > 0.0 {
            return Ok(NoiseSpec { snr_db, seed });
        }
        if !(-20.0..=60.0).contains(&snr_db) {
            return Err(Error::InvalidInput(format!(
                "snr_db {} outside supported range [-20, 60]",
                snr_db
            )));
        }
        Ok(NoiseSpec { snr_db, seed })
    }

    pub fn noiseless(seed: u64) -> Self {
        NoiseSpec {
            snr_db: f64::INFINITY,
            seed,
        }
    }
}

/// One estimated CSI instance with its collection metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub csi: Subcarriers52,
    pub device_id: u16,
    pub position_id: u8,
    pub rx_index: u8,
    /// Decibels; `None` when unknown (stored as NaN on disk).
    pub snr_db: Option<f32>,
    pub channel_tag: u8,
}

impl CsiRecord {
    pub fn with_position(mut self, position_id: u8) -> Self {
        self.position_id = position_id;
        self
    }

    pub fn with_rx_index(mut self, rx_index: u8) -> Self {
        self.rx_index = rx_index;
        self
    }
}

/// Default averaging window for [`denoise`].
pub const DENOISE_WINDOW_DEFAULT: usize = 100;

/// Synthesize a device fingerprint: i.i.d. circular complex Gaussian
/// deviations with standard deviation `sigma_f`, deterministic in
/// `(seed, device_id)`.
pub fn plant_fingerprint(seed: u64, sigma_f: f64, device_id: u16) -> Result<Fingerprint> {
    if !(sigma_f > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma_f must be positive, got {sigma_f}; use Fingerprint::zero for an ideal device"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4650 ^ device_id as u64));
    let normal = Normal::new(0.0, sigma_f / std::f64::consts::SQRT_2).expect("positive std");
    let deviation = Subcarriers52::from_fn(|_| {
        Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
    })?;
    Ok(Fingerprint {
        deviation,
        device_id,
    })
}

/// Variant of [`plant_fingerprint`] with a moving-average smoothing across
/// subcarriers (real devices show smooth deviations; the default generator is
/// white). The result is rescaled so the expected magnitude stays `sigma_f`.
pub fn plant_fingerprint_smooth(
    seed: u64,
    sigma_f: f64,
    device_id: u16,
    half_width: usize,
) -> Result<Fingerprint> {
    let base = plant_fingerprint(seed, sigma_f, device_id)?;
    if half_width == 0 {
        return Ok(base);
    }
    let v = base.deviation.values();
    let w = half_width as isize;
    let mut smoothed = [Complex64::new(0.0, 0.0); 52];
    for (i, slot) in smoothed.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut count = 0.0;
        for d in -w..=w {
            let j = i as isize + d;
            if (0..52).contains(&j) {
                acc += v[j as usize];
                count += 1.0;
            }
        }
        *slot = acc / count;
    }
    // Moving average shrinks the variance by ~1/window; restore the scale.
    let gain = (2.0 * half_width as f64 + 1.0).sqrt();
    for s in smoothed.iter_mut() {
        *s *= gain;
    }
    Ok(Fingerprint {
        deviation: Subcarriers52::new(smoothed)?,
        device_id,
    })
}

/// Forward signal model: `c[k] = h[k] * (1 + f[k]) + z[k]`, with the noise
/// variance set so `10 log10(mean |h(1+f)|^2 / var(z)) = snr_db`.
pub fn forward_csi(fp: &Fingerprint, ch: &ChannelRealization, noise: &NoiseSpec) -> CsiRecord {
    let composite = composite_signal(fp, ch);
    let csi = add_noise(&composite, noise);
    CsiRecord {
        csi,
        device_id: fp.device_id,
        position_id: 0,
        rx_index: 0,
        snr_db: if noise.snr_db.is_finite() {
            Some(noise.snr_db as f32)
        } else {
            None
        },
        channel_tag: ch.channel_tag(),
    }
}

/// The noiseless part of the forward model, `h .* (1 + f)`.
pub fn composite_signal(fp: &Fingerprint, ch: &ChannelRealization) -> Subcarriers52 {
    Subcarriers52::from_fn(|k| {
        ch.freq_response[k] * (Complex64::new(1.0, 0.0) + fp.deviation[k])
    })
    .expect("finite inputs stay finite")
}

/// Add white complex Gaussian noise at `noise.snr_db` relative to the mean
/// power of `signal`, deterministic in `noise.seed`.
pub fn add_noise(signal: &Subcarriers52, noise: &NoiseSpec) -> Subcarriers52 {
    if noise.snr_db.is_infinite() {
        return signal.clone();
    }
    let signal_power = signal.mean_power();
    let var = signal_power / 10f64.powf(noise.snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, 0x5a5a));
    let normal = Normal::new(0.0, (var / 2.0).sqrt()).expect("positive std");
    Subcarriers52::from_fn(|k| {
        signal[k] + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
    })
    .expect("finite")
}

fn check_shared_metadata(records: &[CsiRecord]) -> Result<()> {
    let first = &records[0];
    for r in records {
        if (r.device_id, r.position_id, r.rx_index)
            != (first.device_id, first.position_id, first.rx_index)
        {
            return Err(Error::InvalidInput(format!(
                "records mix metadata: ({},{},{}) vs ({},{},{})",
                r.device_id,
                r.position_id,
                r.rx_index,
                first.device_id,
                first.position_id,
                first.rx_index
            )));
        }
    }
    Ok(())
}

/// Componentwise complex mean of the first `window` records from one
/// device/position/rx chain.
pub fn denoise(records: &[CsiRecord], window: usize) -> Result<Subcarriers52> {
    if records.is_empty() {
        return Err(Error::InvalidInput("denoise: no records".into()));
    }
    if window == 0 {
        return Err(Error::InvalidInput("denoise: window must be >= 1".into()));
    }
    check_shared_metadata(records)?;
    let take = window.min(records.len());
    let mut acc = [Complex64::new(0.0, 0.0); 52];
    for r in &records[..take] {
        for (a, v) in acc.iter_mut().zip(r.csi.iter()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= take as f64;
    }
    Subcarriers52::new(acc)
}

/// Estimate SNR in dB from the sample mean (signal) and per-bin sample
/// variance (noise) of repeated measurements. Returns `f64::INFINITY` for
/// zero-variance inputs.
pub fn snr_estimate(records: &[CsiRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(
            "snr_estimate needs at least 2 records".into(),
        ));
    }
    check_shared_metadata(records)?;
    let n = records.len() as f64;
    let mut mean = [Complex64::new(0.0, 0.0); 52];
    for r in records {
        for (m, v) in mean.iter_mut().zip(r.csi.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut noise_power = 0.0;
    for r in records {
        for (m, v) in mean.iter().zip(r.csi.iter()) {
            noise_power += (v - m).norm_sqr();
        }
    }
    noise_power /= (n - 1.0) * NUM_SUBCARRIERS as f64;
    if noise_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    // The sample mean still carries var/n of noise; remove that bias.
    let raw_signal =
        mean.iter().map(|m| m.norm_sqr()).sum::<f64>() / NUM_SUBCARRIERS as f64;
    let signal_power = (raw_signal - noise_power / n).max(f64::MIN_POSITIVE);
    Ok(10.0 * (signal_power / noise_power).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, ChannelModel, ChannelModelSpec};

    fn flat_channel() -> ChannelRealization {
        sample_channel(&ChannelModelSpec::of(ChannelModel::Flat, false), 0).unwrap()
    }

    #[test]
    fn plant_rejects_non_positive_sigma() {
        assert!(plant_fingerprint(1, 0.0, 0).is_err());
        assert!(plant_fingerprint(1, -0.1, 0).is_err());
        assert!(Fingerprint::zero(3)
            .deviation
            .iter()
            .all(|v| v.norm() == 0.0));
    }

    #[test]
    fn plant_is_deterministic() {
        let a = plant_fingerprint(1, 0.02, 0).unwrap();
        let b = plant_fingerprint(1, 0.02, 0).unwrap();
        assert_eq!(a, b);
        let c = plant_fingerprint(1, 0.02, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn plant_ensemble_std_matches_sigma() {
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for dev in 0..200u16 {
            let fp = plant_fingerprint(99, 0.02, dev).unwrap();
            for v in fp.deviation.iter() {
                sum_sq += v.norm_sqr();
                count += 1;
            }
        }
        let std = (sum_sq / count as f64).sqrt();
        assert!(
            (std - 0.02).abs() < 0.001,
            "ensemble std {} outside 5% of 0.02",
            std
        );
    }

    #[test]
    fn smooth_variant_preserves_scale_and_smooths() {
        let rough = plant_fingerprint(5, 0.02, 0).unwrap();
        let smooth = plant_fingerprint_smooth(5, 0.02, 0, 3).unwrap();
        let scale = |fp: &Fingerprint| {
            (fp.deviation.iter().map(|v| v.norm_sqr()).sum::<f64>() / 52.0).sqrt()
        };
        assert!((scale(&smooth) / scale(&rough) - 1.0).abs() < 0.5);
        let wiggle = |fp: &Fingerprint| {
            fp.deviation
                .values()
                .windows(2)
                .map(|w| (w[1] - w[0]).norm_sqr())
                .sum::<f64>()
        };
        assert!(wiggle(&smooth) < wiggle(&rough));
    }

    #[test]
    fn identity_channel_noiseless_returns_ones() {
        let fp = Fingerprint::zero(0);
        let rec = forward_csi(&fp, &flat_channel(), &NoiseSpec::noiseless(0));
        for v in rec.csi.iter() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn flat_channel_exposes_fingerprint_exactly() {
        let fp = plant_fingerprint(2, 0.02, 7).unwrap();
        let rec = forward_csi(&fp, &flat_channel(), &NoiseSpec::noiseless(0));
        for (v, f) in rec.csi.iter().zip(fp.deviation.iter()) {
            assert!((v - (Complex64::new(1.0, 0.0) + f)).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_variance_matches_snr_definition() {
        // 20 dB on a unit-power signal -> variance 0.01, checked over ~1e5 bins.
        let fp = Fingerprint::zero(0);
        let ch = flat_channel();
        let clean = composite_signal(&fp, &ch);
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..2000u64 {
            let noisy = add_noise(&clean, &NoiseSpec::new(20.0, seed).unwrap());
            for (n, c) in noisy.iter().zip(clean.iter()) {
                acc += (n - c).norm_sqr();
                count += 1;
            }
        }
        let var = acc / count as f64;
        assert!(
            (var - 0.01).abs() < 0.0002,
            "empirical noise variance {} not within 2% of 0.01",
            var
        );
    }

    #[test]
    fn forward_is_deterministic() {
        let fp = plant_fingerprint(3, 0.02, 1).unwrap();
        let ch = flat_channel();
        let noise = NoiseSpec::new(15.0, 42).unwrap();
        let a = forward_csi(&fp, &ch, &noise);
        let b = forward_csi(&fp, &ch, &noise);
        assert_eq!(a, b);
    }

    #[test]
    fn denoise_window_one_returns_single_record() {
        let fp = plant_fingerprint(4, 0.02, 0).unwrap();
        let rec = forward_csi(&fp, &flat_channel(), &NoiseSpec::new(10.0, 1).unwrap());
        let out = denoise(std::slice::from_ref(&rec), 1).unwrap();
        assert_eq!(out, rec.csi);
    }

    #[test]
    fn denoise_identical_records_is_identity() {
        let fp = plant_fingerprint(4, 0.02, 0).unwrap();
        let rec = forward_csi(&fp, &flat_channel(), &NoiseSpec::noiseless(0));
        let records = vec![rec.clone(); 5];
        let out = denoise(&records, 5).unwrap();
        for (a, b) in out.iter().zip(rec.csi.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn denoise_rejects_empty_and_mixed_metadata() {
        assert!(denoise(&[], 1).is_err());
        let fp = plant_fingerprint(4, 0.02, 0).unwrap();
        let a = forward_csi(&fp, &flat_channel(), &NoiseSpec::noiseless(0));
        let b = a.clone().with_position(3);
        assert!(denoise(&[a, b], 2).is_err());
    }

    #[test]
    fn denoise_averaging_law() {
        // Averaging 100 records cuts residual noise power by ~100x.
        let fp = Fingerprint::zero(0);
        let ch = flat_channel();
        let clean = composite_signal(&fp, &ch);
        let records: Vec<CsiRecord> = (0..100)
            .map(|s| forward_csi(&fp, &ch, &NoiseSpec::new(20.0, s).unwrap()))
            .collect();
        let denoised = denoise(&records, 100).unwrap();
        let residual: f64 = denoised
            .iter()
            .zip(clean.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / 52.0;
        let single = 0.01; // 20 dB on unit power
        let gain = single / residual;
        assert!(
            gain > 33.0 && gain < 300.0,
            "averaging gain {} not ~100 within 3x",
            gain
        );
    }

    #[test]
    fn snr_estimate_roundtrip_at_30db() {
        let fp = plant_fingerprint(6, 0.02, 0).unwrap();
        let ch = flat_channel();
        let records: Vec<CsiRecord> = (0..400)
            .map(|s| forward_csi(&fp, &ch, &NoiseSpec::new(30.0, derive_seed(77, s)).unwrap()))
            .collect();
        let est = snr_estimate(&records).unwrap();
        assert!((est - 30.0).abs() < 1.0, "estimate {} dB", est);
    }

    #[test]
    fn snr_estimate_sentinels() {
        let fp = plant_fingerprint(6, 0.02, 0).unwrap();
        let rec = forward_csi(&fp, &flat_channel(), &NoiseSpec::noiseless(0));
        let records = vec![rec.clone(), rec];
        assert_eq!(snr_estimate(&records).unwrap(), f64::INFINITY);
        assert!(snr_estimate(&records[..1]).is_err());
    }

    #[test]
    fn snr_estimate_pure_noise_is_nonpositive() {
        // h = 0: records are unit-power noise only.
        let records: Vec<CsiRecord> = (0..200)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(123, s));
                let normal = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
                let noisy = Subcarriers52::from_fn(|_| {
                    Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
                })
                .unwrap();
                CsiRecord {
                    csi: noisy,
                    device_id: 0,
                    position_id: 0,
                    rx_index: 0,
                    snr_db: None,
                    channel_tag: 0,
                }
            })
            .collect();
        let est = snr_estimate(&records).unwrap();
        assert!(est <= 0.0, "pure-noise estimate {} dB", est);
    }
}
