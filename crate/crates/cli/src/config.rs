//! Experiment configuration: flat JSON with one object per stage.
//! Resolution order is default, then config file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use relplace_core::diffcore::OptimizerKind;
use relplace_core::relnet::InputVariant;
use relplace_core::spatial::Spread;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// `[width, height]` of generated scenes.
    pub image_size: [u32; 2],
    pub scenes: usize,
    pub paths: Paths,
    pub relnet: RelNetStage,
    pub spatial: SpatialStage,
    pub eval: EvalStage,
    pub serve: ServeStage,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: [64, 64],
            scenes: 2000,
            paths: Paths::default(),
            relnet: RelNetStage::default(),
            spatial: SpatialStage::default(),
            eval: EvalStage::default(),
            serve: ServeStage::default(),
        }
    }
}

/// Inputs shared across commands. The output directory is not part of the
/// experiment and is given per invocation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub relnet: Option<PathBuf>,
    pub spatial: Option<PathBuf>,
    /// Directory holding `catalog.json`.
    pub catalog: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelNetStage {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub input_variant: InputVariant,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub mirror_augment: bool,
    pub early_stop_accuracy: Option<f64>,
}

impl Default for RelNetStage {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            batch: 32,
            input_variant: InputVariant::Full,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            mirror_augment: true,
            early_stop_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialStage {
    pub lr: f64,
    pub epochs: usize,
    pub samples: usize,
    pub epsilon: f64,
    pub spread: Spread,
    pub scenes_per_epoch: Option<usize>,
}

impl Default for SpatialStage {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 1, samples: 20, epsilon: 0.1, spread: Spread::Sobel, scenes_per_epoch: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    RelnetAccuracy,
    Distributions,
    SelfConsistency,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::RelnetAccuracy => "relnet-accuracy",
            EvalMode::Distributions => "distributions",
            EvalMode::SelfConsistency => "self-consistency",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relnet-accuracy" => Ok(EvalMode::RelnetAccuracy),
            "distributions" => Ok(EvalMode::Distributions),
            "self-consistency" => Ok(EvalMode::SelfConsistency),
            _ => Err(format!("unknown mode {s:?} (expected relnet-accuracy, distributions or self-consistency)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub mode: EvalMode,
    /// Cap on evaluated test scenes.
    pub scenes: Option<usize>,
    pub samples_per_case: usize,
    pub gt_points: usize,
    pub kw_samples: usize,
    /// Heatmap sets exported in distributions mode.
    pub heatmaps: usize,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self {
            mode: EvalMode::RelnetAccuracy,
            scenes: None,
            samples_per_case: 10,
            gt_points: 100,
            kw_samples: 200,
            heatmaps: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeStage {
    pub port: u16,
}

impl Default for ServeStage {
    fn default() -> Self {
        Self { port: 8080 }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with `file`, when given. Fields absent from the file keep their defaults.
    pub fn load(file: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = file else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Pretty JSON with a trailing newline; stable field order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::usage(m.to_string()));
        if self.scenes == 0 {
            return bad("scene count must be at least 1");
        }
        if self.image_size.iter().any(|&d| d < 16) {
            return bad("image size must be at least 16x16");
        }
        let r = &self.relnet;
        if !(r.lr > 0.0 && r.lr.is_finite()) || r.epochs == 0 || r.batch == 0 {
            return bad("relnet lr must be positive and epochs/batch at least 1");
        }
        if !(0.0..1.0).contains(&r.momentum) {
            return bad("relnet momentum must lie in [0, 1)");
        }
        let s = &self.spatial;
        if !(s.lr > 0.0 && s.lr.is_finite()) || s.epochs == 0 || s.samples == 0 {
            return bad("spatial lr must be positive and epochs/samples at least 1");
        }
        if !(0.0..=1.0).contains(&s.epsilon) {
            return bad("spatial epsilon must lie in [0, 1]");
        }
        if s.scenes_per_epoch == Some(0) || self.eval.scenes == Some(0) {
            return bad("scene caps must be at least 1");
        }
        if self.eval.samples_per_case == 0 || self.eval.gt_points == 0 || self.eval.kw_samples == 0 {
            return bad("evaluation sample counts must be at least 1");
        }
        Ok(())
    }
}

/// `WxH`, e.g. `64x64`.
pub fn parse_size(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("size {s:?} is not WxH"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    Ok([w, h])
}
