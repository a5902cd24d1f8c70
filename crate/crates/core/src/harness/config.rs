use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::det::{AnchorConfig, RpnConfig};
use crate::error::{Error, Result};
use crate::perceptron::{EncoderConfig, FusionStrategy};
use crate::vatt2vec::{EmbeddingProvider, PretrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn encoder(self) -> EncoderConfig {
        match self {
            Preset::Desk => EncoderConfig::desk(),
            Preset::Paper => EncoderConfig::paper(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

/// How the attribute vector enters the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrUsage {
    /// Not computed at all.
    None,
    /// Appended to the flattened RoI feature before the detection head.
    Concat,
    /// Fused by the GRU and aligned to the visual feature by `align_loss`.
    GruContrastive,
}

/// Alignment objective between pooled visual features and attribute vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignLoss {
    None,
    /// Symmetric InfoNCE over the batch.
    CrossEntropy,
    /// Positive-pair cosine embedding loss.
    Cosine,
}

macro_rules! kebab_from_str {
    ($t:ty, $what:literal) => {
        impl std::str::FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.to_string()))
                    .map_err(|_| Error::Config(format!(concat!("unknown ", $what, " `{}`"), s)))
            }
        }
    };
}

kebab_from_str!(AttrUsage, "attribute usage");
kebab_from_str!(AlignLoss, "alignment loss");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Overrides the preset's learnable token count.
    pub learnable_tokens: Option<usize>,
    pub fusion: FusionStrategy,
    pub attr_usage: AttrUsage,
    /// Output channels of the three backbone stages.
    pub backbone_channels: Vec<usize>,
    pub rpn_hidden: usize,
    pub anchors: AnchorConfig,
    pub head_hidden: usize,
    /// Attention heads of the attribute fusion block.
    pub attr_heads: usize,
    /// Hidden width of each per-tag MLP.
    pub attr_mlp_hidden: usize,
    pub attr_head_trainable: bool,
    pub attr_vector_dim: usize,
    /// Seed for the frozen encoder weights when `encoder_weights` is unset.
    pub encoder_seed: u64,
    pub encoder_weights: Option<PathBuf>,
    /// Pretrained attribute head container from `pretrain-attr`.
    pub attr_head_weights: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            learnable_tokens: None,
            fusion: FusionStrategy::Concat,
            attr_usage: AttrUsage::GruContrastive,
            backbone_channels: vec![32, 64, 256],
            rpn_hidden: 128,
            anchors: AnchorConfig {
                scales: vec![12.0, 20.0, 32.0],
                ratios: vec![0.4, 0.7],
            },
            head_hidden: 256,
            attr_heads: 16,
            attr_mlp_hidden: 128,
            attr_head_trainable: false,
            attr_vector_dim: 256,
            encoder_seed: 17,
            encoder_weights: None,
            attr_head_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Linear warmup length in steps.
    pub warmup_steps: usize,
    /// Cap on optimizer steps; 0 means epochs decide.
    pub max_steps: usize,
    /// Fractions of the run after which the learning rate drops by 10x.
    pub lr_drops: Vec<f64>,
    pub rois_per_image: usize,
    pub fg_fraction: f64,
    pub roi_fg_iou: f64,
    pub roi_bg_iou: f64,
    pub rpn_batch: usize,
    pub rpn_fg_iou: f64,
    pub rpn_bg_iou: f64,
    pub rpn_loss: bool,
    pub align_loss: AlignLoss,
    pub align_weight: f64,
    pub contrastive_temperature: f64,
    /// L_va over foreground RoIs only.
    pub align_foreground_only: bool,
    /// Save a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub rpn: RpnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 2,
            epochs: 26,
            warmup_steps: 20,
            max_steps: 0,
            lr_drops: vec![0.7, 0.9],
            rois_per_image: 32,
            fg_fraction: 0.5,
            roi_fg_iou: 0.5,
            roi_bg_iou: 0.5,
            rpn_batch: 64,
            rpn_fg_iou: 0.7,
            rpn_bg_iou: 0.3,
            rpn_loss: true,
            align_loss: AlignLoss::Cosine,
            align_weight: 1.0,
            contrastive_temperature: 0.07,
            align_foreground_only: true,
            checkpoint_every: 0,
            rpn: RpnConfig {
                top_k: 64,
                pre_nms_top_n: 600,
                nms_iou: 0.7,
                min_size: 2.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub rpn: RpnConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
            rpn: RpnConfig {
                top_k: 64,
                pre_nms_top_n: 600,
                nms_iou: 0.7,
                min_size: 2.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub num_crops: usize,
    pub optim: PretrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            num_crops: 50,
            optim: PretrainConfig::default(),
        }
    }
}

/// Complete run configuration, read from TOML. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub preset: Preset,
    /// Dataset directory; when unset the synthetic set is generated in memory.
    pub data_dir: Option<PathBuf>,
    /// Attribute schema file; the built-in vehicle schema when unset.
    pub schema: Option<PathBuf>,
    pub data: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub pretrain: PretrainSection,
    pub embeddings: EmbeddingProvider,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            preset: Preset::Desk,
            data_dir: None,
            schema: None,
            data: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            pretrain: PretrainSection::default(),
            embeddings: EmbeddingProvider::Seeded { seed: 0, dim: 64 },
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Encoder shape after the preset and the K override.
    pub fn encoder(&self) -> EncoderConfig {
        let mut e = self.preset.encoder();
        if let Some(k) = self.model.learnable_tokens {
            e.num_learnable_tokens = k;
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.data.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.rois_per_image == 0 || t.rpn_batch == 0 || t.lr <= 0.0 {
            return Err(Error::Config("train batch sizes and lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.momentum) || t.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight_decay be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&t.fg_fraction) || t.roi_bg_iou > t.roi_fg_iou || t.rpn_bg_iou > t.rpn_fg_iou {
            return Err(Error::Config("fg_fraction in [0, 1] and bg thresholds <= fg thresholds".into()));
        }
        let dim = self.encoder().dim;
        if self.model.attr_heads == 0 || !dim.is_multiple_of(self.model.attr_heads) {
            return Err(Error::Config(format!("attr_heads {} must divide the encoder width {dim}", self.model.attr_heads)));
        }
        if self.model.backbone_channels.len() != 3 {
            return Err(Error::Config("backbone_channels must list 3 stages".into()));
        }
        for (what, p) in [
            ("data_dir", &self.data_dir),
            ("schema", &self.schema),
            ("model.encoder_weights", &self.model.encoder_weights),
            ("model.attr_head_weights", &self.model.attr_head_weights),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{what} `{}` does not exist", p.display())));
                }
            }
        }
        if let EmbeddingProvider::File { path } = &self.embeddings {
            if !path.exists() {
                return Err(Error::Config(format!("embeddings file `{}` does not exist", path.display())));
            }
        }
        Ok(())
    }
}
