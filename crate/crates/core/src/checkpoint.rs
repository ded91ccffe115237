//! Model checkpoints: an `RPT1` tensor file `<base>.rpt` next to a JSON
//! header `<base>.json`.
//!
//! Optimizer moments travel in the same tensor file under `opt.m.` and
//! `opt.v.` name prefixes so a run can resume exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::{container, Optimizer, OptimizerKind, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::relnet::{RelNet, RelNetConfig};
use crate::spatial::{SpatialConfig, SpatialModel};

const FIRST_MOMENT: &str = "opt.m.";
const SECOND_MOMENT: &str = "opt.v.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Relnet,
    Spatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    /// RelNet only.
    pub tap_depth: Option<usize>,
    pub widths: Vec<usize>,
    pub class_order: Vec<Relation>,
    pub epoch: usize,
    pub optimizer_step: u64,
    pub optimizer: Option<OptimizerState>,
    /// Full model configuration for the architecture.
    pub model: serde_json::Value,
    /// Score that selected this checkpoint, when it is a best-of-run snapshot.
    pub score: Option<f64>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, Tensor<f32>)>,
    first_moment: Vec<(String, Tensor<f32>)>,
    second_moment: Vec<(String, Tensor<f32>)>,
}

/// `(<base>.rpt, <base>.json)`; a trailing `.rpt` or `.json` on `base` is ignored.
pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("rpt" | "json") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".rpt"), with(".json"))
}

impl CheckpointHeader {
    pub fn for_relnet(model: &RelNet<f32>, epoch: usize, optimizer: Option<&Optimizer<f32>>) -> Self {
        Self {
            architecture: Architecture::Relnet,
            tap_depth: Some(model.config.tap_depth),
            widths: model.config.widths.clone(),
            class_order: Relation::ALL.to_vec(),
            epoch,
            optimizer_step: optimizer.map_or(0, |o| o.steps_taken()),
            optimizer: optimizer.map(state_of),
            model: serde_json::to_value(&model.config).expect("config serializes"),
            score: None,
        }
    }

    pub fn for_spatial(model: &SpatialModel<f32>, epoch: usize, optimizer: Option<&Optimizer<f32>>) -> Self {
        Self {
            architecture: Architecture::Spatial,
            tap_depth: None,
            widths: model.config.widths.to_vec(),
            class_order: Relation::ALL.to_vec(),
            epoch,
            optimizer_step: optimizer.map_or(0, |o| o.steps_taken()),
            optimizer: optimizer.map(state_of),
            model: serde_json::to_value(&model.config).expect("config serializes"),
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

fn state_of(o: &Optimizer<f32>) -> OptimizerState {
    OptimizerState { kind: o.kind, lr: o.lr, momentum: o.momentum }
}

/// Writes both files. Moments are stored only when the optimizer has taken a step.
pub fn save_checkpoint(
    base: &Path,
    header: &CheckpointHeader,
    params: &ParamSet<f32>,
    optimizer: Option<&Optimizer<f32>>,
) -> Result<()> {
    let (rpt, json) = checkpoint_paths(base);
    if let Some(dir) = rpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tensors = params.to_named_f32();
    if let Some(opt) = optimizer {
        let (_, first, second) = opt.state();
        for (prefix, buffers) in [(FIRST_MOMENT, first), (SECOND_MOMENT, second)] {
            for (p, buf) in params.iter().zip(buffers) {
                tensors.push((format!("{prefix}{}", p.name), Tensor::new(p.tensor.shape(), buf.clone())?));
            }
        }
    }
    container::save(&rpt, &tensors)?;
    let mut text = serde_json::to_string_pretty(header)?;
    text.push('\n');
    std::fs::write(json, text)?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<Checkpoint> {
    let (rpt, json) = checkpoint_paths(base);
    for p in [&rpt, &json] {
        if !p.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("checkpoint file {} not found", p.display()),
            )));
        }
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&std::fs::read(&json)?).map_err(|e| Error::format(&json, e.to_string()))?;
    if header.class_order != Relation::ALL {
        return Err(Error::format(&json, "class order differs from inside, left, right, in_front, behind, on_top"));
    }
    let mut params = Vec::new();
    let mut first_moment = Vec::new();
    let mut second_moment = Vec::new();
    for (name, t) in container::load(&rpt)? {
        if let Some(n) = name.strip_prefix(FIRST_MOMENT) {
            first_moment.push((n.to_string(), t));
        } else if let Some(n) = name.strip_prefix(SECOND_MOMENT) {
            second_moment.push((n.to_string(), t));
        } else {
            params.push((name, t));
        }
    }
    Ok(Checkpoint { header, params, first_moment, second_moment })
}

impl Checkpoint {
    fn expect(&self, arch: Architecture) -> Result<()> {
        if self.header.architecture == arch {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "checkpoint holds a {:?} model, expected {arch:?}",
                self.header.architecture
            )))
        }
    }

    pub fn relnet(&self) -> Result<RelNet<f32>> {
        self.expect(Architecture::Relnet)?;
        let config: RelNetConfig = serde_json::from_value(self.header.model.clone())?;
        let mut model = RelNet::new(config, 0)?;
        model.params.load_values(&self.params)?;
        Ok(model)
    }

    pub fn spatial(&self) -> Result<SpatialModel<f32>> {
        self.expect(Architecture::Spatial)?;
        let config: SpatialConfig = serde_json::from_value(self.header.model.clone())?;
        let mut model = SpatialModel::new(config, 0)?;
        model.params.load_values(&self.params)?;
        Ok(model)
    }

    /// Rebuilds the optimizer for `params` (same order and names as at save time).
    pub fn optimizer(&self, params: &ParamSet<f32>) -> Result<Optimizer<f32>> {
        let state = self
            .header
            .optimizer
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("checkpoint carries no optimizer state".into()))?;
        let mut opt = Optimizer::new(state.kind, state.lr).with_momentum(state.momentum);
        let gather = |stored: &[(String, Tensor<f32>)]| -> Result<Vec<Vec<f32>>> {
            if stored.is_empty() {
                return Ok(Vec::new());
            }
            params
                .iter()
                .map(|p| {
                    stored
                        .iter()
                        .find(|(n, _)| *n == p.name)
                        .map(|(_, t)| t.data().to_vec())
                        .ok_or_else(|| Error::InvalidArgument(format!("no optimizer moment for `{}`", p.name)))
                })
                .collect()
        };
        opt.restore_state(self.header.optimizer_step, gather(&self.first_moment)?, gather(&self.second_moment)?);
        Ok(opt)
    }
}
