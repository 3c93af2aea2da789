//! Scaled-down end-to-end experiment: synthetic devices, collection under a
//! filtered flat channel, augmentation across channel models and SNR levels,
//! two-stage training, and evaluation on channel conditions never seen in
//! training (model D, NLoS).
//!
//! The pipeline mirrors a real deployment: denoised "measurements" are the
//! augmentation bases (so the transmit-filter shape stays in the data), the
//! synthetic training channels exclude model D, and the held-out test set
//! draws fresh model-D realizations per record.

use std::path::Path;

use crate::augment::{build_dataset, split, AugmentPlan, AugmentStrategy, LabeledBase};
use crate::channel::{
    compose_filter, default_pulse_filter, sample_channel, ChannelModel, ChannelModelSpec,
};
use crate::error::Result;
use crate::fusion::{evaluate_decisions, FusionMethod};
use crate::io::csir::CsirReader;
use crate::net::train::{
    train_stage1, train_stage2, EncodedDataset, Stage2Options, TrainConfig, TrainReport,
};
use crate::net::{DeepCrf, InputEncoding, NetworkConfig};
use crate::signal::{denoise, forward_csi, plant_fingerprint, CsiRecord, Fingerprint, NoiseSpec};
use crate::spectrum::derive_seed;

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub devices: u16,
    pub sigma_f: f64,
    /// Synthesize across {flat, B, C} (LoS and NLoS); `false` trains on the
    /// flat channel only (the no-augmentation arm).
    pub augmented: bool,
    pub realizations_per_type: u32,
    pub snr_grid_db: Vec<f64>,
    /// Epoch cap per stage.
    pub stage_epochs: usize,
    pub batch_size: usize,
    /// Held-out records per device, each through a fresh model-D NLoS
    /// realization at `test_snr_db`.
    pub test_records_per_device: usize,
    pub test_snr_db: f64,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            devices: 5,
            sigma_f: 0.02,
            augmented: true,
            realizations_per_type: 24,
            snr_grid_db: vec![10.0, 20.0, 30.0, 40.0],
            stage_epochs: 15,
            batch_size: 256,
            test_records_per_device: 256,
            test_snr_db: 30.0,
            seed: 1,
        }
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub classes: Vec<u16>,
    pub net: DeepCrf,
    pub test_records: Vec<CsiRecord>,
    pub single_shot_accuracy: f64,
    /// Accuracy with average-probability fusion at each window size.
    pub fused_accuracy: Vec<(usize, f64)>,
    /// Raw bytes of the generated training dataset, for determinism checks.
    pub dataset_bytes: Vec<u8>,
    pub stage1: Option<TrainReport>,
    pub stage2: TrainReport,
}

/// Fingerprints for the experiment's devices.
pub fn experiment_fingerprints(spec: &ExperimentSpec) -> Result<Vec<Fingerprint>> {
    (0..spec.devices)
        .map(|dev| plant_fingerprint(derive_seed(spec.seed, 0xf0), spec.sigma_f, dev))
        .collect()
}

/// Denoised collection bases: 100 measurements per device under a filtered
/// flat channel at the test SNR, averaged.
pub fn collection_bases(spec: &ExperimentSpec) -> Result<Vec<LabeledBase>> {
    let pulse = default_pulse_filter();
    let flat = sample_channel(&ChannelModelSpec::of(ChannelModel::Flat, true), 0)?;
    let collected = compose_filter(&flat, &pulse);
    experiment_fingerprints(spec)?
        .iter()
        .map(|fp| {
            let records: Vec<CsiRecord> = (0..100)
                .map(|m| {
                    forward_csi(
                        fp,
                        &collected,
                        &NoiseSpec::new(
                            spec.test_snr_db,
                            derive_seed(spec.seed, 0xc0_0000 + fp.device_id as u64 * 1000 + m),
                        )
                        .expect("valid snr"),
                    )
                })
                .collect();
            Ok(LabeledBase {
                device_id: fp.device_id,
                position_id: 0,
                csi: denoise(&records, 100)?,
            })
        })
        .collect()
}

fn training_channels(augmented: bool) -> Vec<ChannelModelSpec> {
    if augmented {
        vec![
            ChannelModelSpec::of(ChannelModel::Flat, false),
            ChannelModelSpec::of(ChannelModel::B, true),
            ChannelModelSpec::of(ChannelModel::B, false),
            ChannelModelSpec::of(ChannelModel::C, true),
            ChannelModelSpec::of(ChannelModel::C, false),
        ]
    } else {
        vec![ChannelModelSpec::of(ChannelModel::Flat, false)]
    }
}

/// Fresh unseen-channel test records: independent model-D NLoS realizations
/// (composed with the transmit filter) per record.
pub fn unseen_test_records(spec: &ExperimentSpec) -> Result<Vec<CsiRecord>> {
    let pulse = default_pulse_filter();
    let d_nlos = ChannelModelSpec::of(ChannelModel::D, false);
    let mut records = Vec::new();
    for fp in experiment_fingerprints(spec)? {
        for i in 0..spec.test_records_per_device {
            let ch = sample_channel(
                &d_nlos,
                derive_seed(spec.seed, 0xd0_0000 + fp.device_id as u64 * 100_000 + i as u64),
            )?;
            let ch = compose_filter(&ch, &pulse);
            records.push(forward_csi(
                &fp,
                &ch,
                &NoiseSpec::new(
                    spec.test_snr_db,
                    derive_seed(spec.seed, 0xe0_0000 + fp.device_id as u64 * 100_000 + i as u64),
                )
                .expect("valid snr"),
            ));
        }
    }
    Ok(records)
}

/// Run the full pipeline in `dir`. Writes `train.csir` (+ manifest) there.
pub fn run_experiment(spec: &ExperimentSpec, dir: &Path) -> Result<ExperimentOutcome> {
    let bases = collection_bases(spec)?;
    let plan = AugmentPlan {
        strategy: AugmentStrategy::DenoisedCsi,
        channel_specs: training_channels(spec.augmented),
        snr_grid_db: spec.snr_grid_db.clone(),
        realizations_per_type: spec.realizations_per_type,
        base_seed: derive_seed(spec.seed, 0xa6),
    };
    let dataset_path = dir.join("train.csir");
    build_dataset(&bases, &plan, &dataset_path)?;
    let dataset_bytes = std::fs::read(&dataset_path)?;

    let records = CsirReader::read_all(&dataset_path)?;
    let labels: Vec<u16> = records.iter().map(|r| r.device_id).collect();
    let parts = split(&labels, (0.8, 0.1, 0.1), derive_seed(spec.seed, 0x59))?;
    let data = EncodedDataset::from_records(&records, InputEncoding::Iq)?;

    let net_config = NetworkConfig::new(InputEncoding::Iq, spec.devices as usize);
    let mut net = DeepCrf::new(net_config, derive_seed(spec.seed, 0x11))?;
    let cfg = TrainConfig {
        batch_size: spec.batch_size,
        max_epochs: spec.stage_epochs,
        seed: derive_seed(spec.seed, 0x7a),
        ..TrainConfig::default()
    };
    let stage1 = train_stage1(&mut net, &data, &parts.train, &parts.val, &cfg)?;
    let stage2 = train_stage2(
        &mut net,
        &data,
        &parts.train,
        &parts.val,
        &cfg,
        Stage2Options::default(),
    )?;

    let test_records = unseen_test_records(spec)?;
    let refs: Vec<&CsiRecord> = test_records.iter().collect();
    let decisions = net.decide_records(&refs)?;
    let classes = data.classes.clone();

    let mut fused_accuracy = Vec::new();
    let mut single_shot_accuracy = 0.0;
    for n_csi in [1usize, 4, 8, 16] {
        let report = evaluate_decisions(
            &test_records,
            &decisions,
            &classes,
            FusionMethod::Ap,
            n_csi,
            1,
            &[],
        )?;
        if n_csi == 1 {
            single_shot_accuracy = report.accuracy();
        }
        fused_accuracy.push((n_csi, report.accuracy()));
    }

    Ok(ExperimentOutcome {
        classes,
        net,
        test_records,
        single_shot_accuracy,
        fused_accuracy,
        dataset_bytes,
        stage1: Some(stage1),
        stage2,
    })
}
