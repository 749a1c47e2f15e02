//! Run configuration: one JSON document with a section per subsystem.
//!
//! Every field is optional and falls back to the documented default, so an
//! empty object `{}` is a valid config. Unknown keys anywhere in the
//! document are hard errors. After seed resolution the fully resolved
//! document is echoed to the run directory as `resolved-config.json`, so a
//! finished run can be reproduced from its outputs alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use artic_core::dataio::{atomic_write, SynthConfig};
use artic_core::features::FbankConfig;
use artic_core::mdn::{MtlWeights, DEFAULT_VARIANCE_FLOOR};
use artic_core::mlan::{MlanConfig, DEFAULT_BOTTLENECK_DIM};
use artic_core::neuralnet::{Activation, TrainConfig};
use artic_core::pipeline::{FrontEnd, InversionRecipe, Smoothing};
use artic_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeaturesSection,
    pub net: NetSection,
    pub mdn: MdnSection,
    pub mtl_weights: MtlWeights,
    pub mlpg: MlpgSection,
    pub mlan: MlanSection,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

/// Acoustic front end: the filterbank used by `extract` plus the
/// normalization and splicing applied before any network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub fbank: FbankConfig,
    pub splice_left: usize,
    pub splice_right: usize,
    /// Per-utterance cepstral mean/variance normalization.
    pub cmvn: bool,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            fbank: FbankConfig::default(),
            splice_left: 2,
            splice_right: 2,
            cmvn: true,
        }
    }
}

/// Inversion network trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Carry LHUC scaling vectors on every hidden layer so the trained
    /// model can later be speaker-adapted.
    pub lhuc: bool,
    pub dropout: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            hidden_layers: vec![256, 256, 256],
            activation: Activation::Relu,
            lhuc: true,
            dropout: 0.0,
        }
    }
}

/// Mixture density head and target layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdnSection {
    pub n_mix: usize,
    pub variance_floor: f64,
    /// Train against `[static | delta | delta-delta]` targets; required
    /// for MLPG smoothing at generation time.
    pub delta_targets: bool,
}

impl Default for MdnSection {
    fn default() -> Self {
        MdnSection {
            n_mix: 2,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            delta_targets: true,
        }
    }
}

/// Generation-time smoothing default; the `invert --smoothing` flag
/// overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpgSection {
    pub smoothing: Smoothing,
}

impl Default for MlpgSection {
    fn default() -> Self {
        MlpgSection {
            smoothing: Smoothing::Mlpg,
        }
    }
}

/// Cross-domain stack topology: each level is one hidden layer followed by
/// its bottleneck. Input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlanSection {
    pub hidden: usize,
    pub bottleneck_dim: usize,
}

impl Default for MlanSection {
    fn default() -> Self {
        MlanSection {
            hidden: 64,
            bottleneck_dim: DEFAULT_BOTTLENECK_DIM,
        }
    }
}

impl RunConfig {
    /// Parse a config file. Malformed JSON and unknown keys are both
    /// configuration errors naming the file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reject bad values before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.features.fbank.validate()?;
        self.recipe(FrontEnd::RawSpliced).validate()?;
        self.synth.validate()?;
        if self.mlan.hidden == 0 || self.mlan.bottleneck_dim == 0 {
            return Err(Error::Config(
                "mlan hidden and bottleneck_dim must be positive".into(),
            ));
        }
        if self.mlan.hidden == self.mlan.bottleneck_dim {
            return Err(Error::Config(format!(
                "mlan hidden width must differ from bottleneck_dim, got {} for both",
                self.mlan.hidden
            )));
        }
        Ok(())
    }

    /// Force one seed over both training and synthesis, as the `--seed`
    /// flag and the `A2A_SEED` environment variable do.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
            self.synth.seed = s;
        }
    }

    /// The inversion recipe this config describes for the given front end.
    pub fn recipe(&self, front_end: FrontEnd) -> InversionRecipe {
        InversionRecipe {
            front_end,
            splice_left: self.features.splice_left,
            splice_right: self.features.splice_right,
            cmvn: self.features.cmvn,
            hidden_layers: self.net.hidden_layers.clone(),
            activation: self.net.activation,
            lhuc: self.net.lhuc,
            dropout: self.net.dropout,
            n_mix: self.mdn.n_mix,
            variance_floor: self.mdn.variance_floor,
            delta_targets: self.mdn.delta_targets,
            weights: self.mtl_weights,
            train: self.train,
        }
    }

    /// Stack topology for spliced inputs of width `in_dim` over `n_classes`
    /// monophone targets.
    pub fn mlan_config(&self, in_dim: usize, n_classes: usize) -> MlanConfig {
        MlanConfig::with_dims(in_dim, self.mlan.hidden, self.mlan.bottleneck_dim, n_classes)
    }

    /// Write the resolved document into the run directory.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("config serialization: {e}")))?;
        text.push('\n');
        atomic_write(&dir.join("resolved-config.json"), text.as_bytes())
    }
}
