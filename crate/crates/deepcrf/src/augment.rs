//! Synthetic training-data generation: multiply a fingerprint-bearing base
//! vector by synthetic channel realizations and add noise across an SNR grid.
//!
//! Strategy "denoised-csi" uses denoised measurements as bases (keeping the
//! transmit-filter shape in the data); strategy "fingerprint" uses extracted
//! `1 + f_hat` vectors. Both synthesize `h_a .* base + z_a`, so the
//! fingerprint-bearing factor is never perturbed: with the synthetic channel
//! known and noise off, dividing it back out recovers the base exactly.
//!
//! Generation streams records to disk with a manifest of per-slice counts; a
//! storage failure leaves a `.manifest.partial` next to the output so
//! progress is auditable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{sample_channel, ChannelModelSpec, ChannelRealization};
use crate::error::{Error, Result};
use crate::io::csir::CsirWriter;
use crate::signal::{add_noise, CsiRecord, NoiseSpec, Subcarriers52};
use crate::spectrum::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentStrategy {
    /// Multiply extracted fingerprints `1 + f_hat`.
    Fingerprint,
    /// Multiply denoised CSI (keeps filtering effects in the data).
    DenoisedCsi,
}

impl AugmentStrategy {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "fingerprint" => Ok(AugmentStrategy::Fingerprint),
            "denoised-csi" => Ok(AugmentStrategy::DenoisedCsi),
            other => Err(Error::Config(format!("unknown strategy {:?}", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentPlan {
    pub strategy: AugmentStrategy,
    pub channel_specs: Vec<ChannelModelSpec>,
    pub snr_grid_db: Vec<f64>,
    pub realizations_per_type: u32,
    pub base_seed: u64,
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.channel_specs.is_empty() || self.snr_grid_db.is_empty() {
            return Err(Error::InvalidInput(
                "augment plan needs non-empty channel and SNR grids".into(),
            ));
        }
        if self.realizations_per_type < 1 {
            return Err(Error::InvalidInput(
                "realizations_per_type must be >= 1".into(),
            ));
        }
        for spec in &self.channel_specs {
            spec.validate()?;
        }
        Ok(())
    }

    /// Records produced per base: `types * realizations * SNR levels`.
    pub fn records_per_base(&self) -> u64 {
        self.channel_specs.len() as u64
            * self.realizations_per_type as u64
            * self.snr_grid_db.len() as u64
    }
}

/// A fingerprint-bearing base vector with its labels.
#[derive(Debug, Clone)]
pub struct LabeledBase {
    pub device_id: u16,
    pub position_id: u8,
    pub csi: Subcarriers52,
}

/// One augmented sample: `h_a .* base + z_a`. The strategy only states what
/// `base` is; the synthesis is identical.
pub fn augment_one(
    base: &Subcarriers52,
    ch: &ChannelRealization,
    noise: &NoiseSpec,
    _strategy: AugmentStrategy,
) -> CsiRecord {
    let faded = ch.freq_response.hadamard(base);
    let csi = add_noise(&faded, noise);
    CsiRecord {
        csi,
        device_id: 0,
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

/// Per-slice record counts of a finished (or partially finished) build.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildManifest {
    pub total: u64,
    /// (device, channel_tag, snr_db string) -> count.
    pub counts: BTreeMap<(u16, u8, String), u64>,
}

impl BuildManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("total\t{}\ndevice\tchannel_tag\tsnr_db\tcount\n", self.total);
        for ((dev, tag, snr), n) in &self.counts {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", dev, tag, snr, n));
        }
        s
    }
}

fn manifest_path(output: &Path, partial: bool) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    name.push_str(if partial { ".manifest.partial" } else { ".manifest" });
    output.with_file_name(name)
}

/// Generate the full grid `bases x channel types x realizations x SNRs`,
/// streamed to `output` in that canonical order. Channel realizations are
/// indexed by (type, realization) and shared across bases. Deterministic in
/// `plan.base_seed`.
pub fn build_dataset(
    bases: &[LabeledBase],
    plan: &AugmentPlan,
    output: &Path,
) -> Result<BuildManifest> {
    plan.validate()?;
    if bases.is_empty() {
        return Err(Error::InvalidInput("build_dataset: no bases".into()));
    }
    let mut manifest = BuildManifest::default();
    let result = stream_records(bases, plan, output, &mut manifest);
    match result {
        Ok(()) => {
            std::fs::write(manifest_path(output, false), manifest.to_text())?;
            Ok(manifest)
        }
        Err(e) => {
            // Best effort: record how far generation got.
            let _ = std::fs::write(manifest_path(output, true), manifest.to_text());
            Err(e)
        }
    }
}

fn stream_records(
    bases: &[LabeledBase],
    plan: &AugmentPlan,
    output: &Path,
    manifest: &mut BuildManifest,
) -> Result<()> {
    let mut writer = CsirWriter::create(output)?;
    for (base_idx, base) in bases.iter().enumerate() {
        for (type_idx, spec) in plan.channel_specs.iter().enumerate() {
            for realization in 0..plan.realizations_per_type {
                let ch_seed = derive_seed(
                    plan.base_seed,
                    0x0100_0000u64 ^ ((type_idx as u64) << 32) ^ realization as u64,
                );
                let ch = sample_channel(spec, ch_seed)?;
                for (snr_idx, &snr_db) in plan.snr_grid_db.iter().enumerate() {
                    let noise_seed = derive_seed(
                        plan.base_seed,
                        0x0200_0000u64
                            ^ ((base_idx as u64) << 48)
                            ^ ((type_idx as u64) << 40)
                            ^ ((realization as u64) << 8)
                            ^ snr_idx as u64,
                    );
                    let noise = NoiseSpec::new(snr_db, noise_seed)?;
                    let rec = augment_one(&base.csi, &ch, &noise, plan.strategy)
                        .with_position(base.position_id);
                    let rec = CsiRecord {
                        device_id: base.device_id,
                        ..rec
                    };
                    writer.write_record(&rec)?;
                    manifest.total += 1;
                    *manifest
                        .counts
                        .entry((base.device_id, rec.channel_tag, format!("{}", snr_db)))
                        .or_insert(0) += 1;
                }
            }
        }
    }
    writer.finish()?;
    Ok(())
}

/// Train/validation/test index split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: every device keeps its share in each partition
/// (largest-remainder allocation per class). Deterministic in `seed`.
pub fn split(labels: &[u16], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::InvalidInput(format!(
            "fractions must be non-negative and sum to 1, got {:?}",
            fractions
        )));
    }
    let mut per_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        per_class.entry(label).or_default().push(i);
    }
    for (label, members) in &per_class {
        if members.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "class {} has {} samples, fewer than the 3 splits",
                label,
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5917));
    let mut out = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut members) in per_class {
        members.shuffle(&mut rng);
        let n = members.len();
        // Largest-remainder apportionment; guarantee one sample in val/test
        // when their fractions are positive.
        let exact = [ft * n as f64, fv * n as f64, fe * n as f64];
        let mut sizes = [0usize; 3];
        let mut rem: Vec<(f64, usize)> = Vec::new();
        let mut assigned = 0usize;
        for (j, &e) in exact.iter().enumerate() {
            sizes[j] = e.floor() as usize;
            assigned += sizes[j];
            rem.push((e - e.floor(), j));
        }
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for k in 0..(n - assigned) {
            sizes[rem[k % 3].1] += 1;
        }
        for j in [1, 2] {
            let frac = if j == 1 { fv } else { fe };
            if frac > 0.0 && sizes[j] == 0 {
                sizes[j] = 1;
                sizes[0] -= 1;
            }
        }
        let (a, rest) = members.split_at(sizes[0]);
        let (b, c) = rest.split_at(sizes[1]);
        out.train.extend_from_slice(a);
        out.val.extend_from_slice(b);
        out.test.extend_from_slice(c);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
