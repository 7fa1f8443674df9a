//! Run configuration. Every field has a default, so an empty file is valid;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanes::LaneConfig;
use crate::losses::{DEFAULT_EPSILON, DEFAULT_RATIO_LIMIT};
use crate::markings::MarkingConfig;
use crate::types::ImageSize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpConfig {
    /// Minimum existence probability for a frame to report a VP.
    pub existence_threshold: f64,
    /// Radius (pixels) of the circular baseline target.
    pub binary_radius: f64,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig {
            existence_threshold: 0.5,
            binary_radius: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub ratio_limit: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ratio_limit: DEFAULT_RATIO_LIMIT,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Lane matching radius in pixels.
    pub lane_radius: f64,
    /// Match lane points to ground truth of the same label only.
    pub class_aware: bool,
    /// VP recall thresholds in pixels.
    pub vp_thresholds: Vec<f64>,
    pub include_hard: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lane_radius: 20.0,
            class_aware: true,
            vp_thresholds: (1..=12).map(|i| f64::from(i) * 5.0).collect(),
            include_hard: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub image: ImageSize,
    pub vp: VpConfig,
    pub lanes: LaneConfig,
    pub markings: MarkingConfig,
    pub losses: LossConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.lanes.validate()?;
        self.markings.validate()?;
        let vp = &self.vp;
        if !(vp.existence_threshold >= 0.0 && vp.existence_threshold <= 1.0) {
            return Err(Error::Validation("vp.existence_threshold out of range".into()));
        }
        if !(vp.binary_radius > 0.0 && vp.binary_radius.is_finite()) {
            return Err(Error::Validation("vp.binary_radius must be positive".into()));
        }
        if !(self.losses.ratio_limit > 1.0) {
            return Err(Error::Validation("losses.ratio_limit must exceed 1".into()));
        }
        if !(self.losses.epsilon > 0.0 && self.losses.epsilon < 1.0) {
            return Err(Error::Validation("losses.epsilon out of range".into()));
        }
        if !(self.eval.lane_radius > 0.0) {
            return Err(Error::Validation("eval.lane_radius must be positive".into()));
        }
        if self.eval.vp_thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Validation("eval.vp_thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
