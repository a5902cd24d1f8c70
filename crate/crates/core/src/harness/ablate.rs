//! One-axis ablations: every level is trained from the same seed on the same
//! data and scored with AP / AP50 / AP75.

use serde::{Deserialize, Serialize};

use super::config::{AlignLoss, AttrUsage, Config};
use super::eval::evaluate;
use super::model::VfmDet;
use super::synth::Sample;
use super::train::{train, TrainOptions};
use crate::error::{Error, Result};
use crate::perceptron::FusionStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    LearnableTokens,
    Fusion,
    AttrUsage,
    Loss,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [AblationAxis::LearnableTokens, AblationAxis::Fusion, AblationAxis::AttrUsage, AblationAxis::Loss];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::LearnableTokens => "learnable-tokens",
            AblationAxis::Fusion => "fusion",
            AblationAxis::AttrUsage => "attr-usage",
            AblationAxis::Loss => "loss",
        }
    }

    pub fn levels(self) -> Vec<&'static str> {
        match self {
            AblationAxis::LearnableTokens => vec!["4", "8", "12"],
            AblationAxis::Fusion => vec!["concat", "weighted", "linear"],
            AblationAxis::AttrUsage => vec!["none", "concat", "gru-contrastive"],
            AblationAxis::Loss => vec!["none", "cross-entropy", "cosine"],
        }
    }

    /// `base` with this axis set to `level`. The loss axis forces the GRU
    /// attribute path, since the alignment loss only exists there.
    pub fn apply(self, base: &Config, level: &str) -> Result<Config> {
        let mut c = base.clone();
        match self {
            AblationAxis::LearnableTokens => {
                let k = level
                    .parse()
                    .map_err(|_| Error::Config(format!("learnable token count `{level}` is not an integer")))?;
                c.model.learnable_tokens = Some(k);
            }
            AblationAxis::Fusion => c.model.fusion = level.parse::<FusionStrategy>()?,
            AblationAxis::AttrUsage => c.model.attr_usage = level.parse::<AttrUsage>()?,
            AblationAxis::Loss => {
                c.model.attr_usage = AttrUsage::GruContrastive;
                c.train.align_loss = level.parse::<AlignLoss>()?;
            }
        }
        Ok(c)
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub level: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Markdown table with AP columns in percent.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} | AP | AP50 | AP75 |\n|---|---|---|---|\n", self.axis.name());
        for r in &self.rows {
            s.push_str(&format!("| {} | {:.1} | {:.1} | {:.1} |\n", r.level, 100.0 * r.ap, 100.0 * r.ap50, 100.0 * r.ap75));
        }
        s
    }
}

pub fn run_ablation(base: &Config, axis: AblationAxis, train_set: &[Sample], eval_set: &[Sample], verbose: bool) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for level in axis.levels() {
        let config = axis.apply(base, level)?;
        if verbose {
            eprintln!("ablation {} = {level}", axis.name());
        }
        let mut model = VfmDet::from_config(&config)?;
        let report = train(&mut model, train_set, &TrainOptions::default())?;
        let eval = evaluate(&model, eval_set)?;
        rows.push(AblationRow {
            level: level.to_string(),
            ap: eval.ap,
            ap50: eval.ap50,
            ap75: eval.ap75,
            final_loss: report.logs.last().map_or(f64::NAN, |l| l.losses.total),
        });
    }
    Ok(AblationTable { axis, rows })
}
