//! Run configuration: a TOML document with one section per pipeline stage.
//! Unknown keys are rejected so typos fail loudly. Every key has a default;
//! an empty document is a valid configuration.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, ChannelModelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub augment: AugmentSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub fusion: FusionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    /// "denoised-csi" (multiply denoised CSI by synthetic channels) or
    /// "fingerprint" (multiply extracted fingerprints).
    pub strategy: String,
    /// Channel condition names: "flat", "b-los", "b-nlos", "c-los", "c-nlos",
    /// "d-los", "d-nlos", "f-los", "f-nlos".
    pub channel_models: Vec<String>,
    pub snr_grid_db: Vec<f64>,
    pub realizations_per_type: u32,
    pub base_seed: u64,
    /// Measurements averaged per denoised base.
    pub denoise_window: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            strategy: "denoised-csi".into(),
            channel_models: vec![
                "b-los".into(),
                "b-nlos".into(),
                "c-los".into(),
                "c-nlos".into(),
                "d-los".into(),
                "d-nlos".into(),
            ],
            snr_grid_db: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            realizations_per_type: 50,
            base_seed: 7,
            denoise_window: crate::signal::DENOISE_WINDOW_DEFAULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// "iq" or "amp-phase".
    pub input_encoding: String,
    pub num_classes: usize,
    /// Filters for the 1x1 / 1x3 / 1x5 spatial-block branches.
    pub branch_filters: [usize; 3],
    /// Channels after the 1x1 reduction before the dense head.
    pub reduce_channels: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            input_encoding: "iq".into(),
            num_classes: 19,
            branch_filters: [24, 24, 16],
            reduce_channels: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub tau: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 512,
            patience: 10,
            tau: 0.07,
            max_epochs: 200,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    /// "mv", "ap", "bc" or "data".
    pub method: String,
    pub n_csi: usize,
    pub n_rx: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            method: "ap".into(),
            n_csi: 4,
            n_rx: 1,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }
}

/// Parse a channel-condition name into a model spec.
pub fn channel_spec_from_name(name: &str) -> Result<ChannelModelSpec> {
    let lower = name.to_ascii_lowercase();
    let (model, los) = match lower.as_str() {
        "flat" => (ChannelModel::Flat, false),
        "b-los" => (ChannelModel::B, true),
        "b-nlos" => (ChannelModel::B, false),
        "c-los" => (ChannelModel::C, true),
        "c-nlos" => (ChannelModel::C, false),
        "d-los" => (ChannelModel::D, true),
        "d-nlos" => (ChannelModel::D, false),
        "f-los" => (ChannelModel::F, true),
        "f-nlos" => (ChannelModel::F, false),
        other => {
            return Err(Error::Config(format!(
                "unknown channel model {:?} (expected flat, b-los, b-nlos, ...)",
                other
            )))
        }
    };
    Ok(ChannelModelSpec::of(model, los))
}
