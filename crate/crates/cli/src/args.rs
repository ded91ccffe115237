use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use relplace_core::relnet::InputVariant;
use relplace_core::spatial::Spread;

use crate::config::{parse_size, EvalMode, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "relplace",
    version,
    about = "Synthetic tabletop data, relation classifier and placement-map training, evaluation and serving"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    Gen(GenArgs),
    /// Train the relation classifier.
    TrainRelnet(TrainRelnetArgs),
    /// Train the placement network against a frozen classifier.
    TrainSpatial(TrainSpatialArgs),
    /// Evaluate checkpoints on the test split.
    Eval(EvalArgs),
    /// Serve the interactive placement API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Omit wall-clock fields from the run log.
    #[arg(long)]
    pub no_timestamps: bool,
}

impl Common {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            c.seed = s;
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Image size as WxH.
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub size: Option<[u32; 2]>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl GenArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        self.common.apply(c);
        if let Some(n) = self.scenes {
            c.scenes = n;
        }
        if let Some(s) = self.size {
            c.image_size = s;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainRelnetArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `gen`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// full, image_binary_masks or masks_only.
    #[arg(long)]
    pub input_variant: Option<InputVariant>,
    /// Stop once validation accuracy reaches this value.
    #[arg(long)]
    pub early_stop: Option<f64>,
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
}

impl TrainRelnetArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        self.common.apply(c);
        if let Some(d) = &self.data {
            c.paths.data = Some(d.clone());
        }
        let r = &mut c.relnet;
        if let Some(v) = self.epochs {
            r.epochs = v;
        }
        if let Some(v) = self.batch {
            r.batch = v;
        }
        if let Some(v) = self.lr {
            r.lr = v;
        }
        if let Some(v) = self.input_variant {
            r.input_variant = v;
        }
        if let Some(v) = self.early_stop {
            r.early_stop_accuracy = Some(v);
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainSpatialArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// RelNet checkpoint (path without extension, or the .rpt file).
    #[arg(long, value_name = "CKPT")]
    pub relnet: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Locations sampled per relation channel per step.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// none or sobel.
    #[arg(long)]
    pub spread: Option<Spread>,
    #[arg(long)]
    pub scenes_per_epoch: Option<usize>,
    #[arg(long)]
    pub resume: bool,
}

impl TrainSpatialArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        self.common.apply(c);
        if let Some(d) = &self.data {
            c.paths.data = Some(d.clone());
        }
        if let Some(p) = &self.relnet {
            c.paths.relnet = Some(p.clone());
        }
        let s = &mut c.spatial;
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = self.lr {
            s.lr = v;
        }
        if let Some(v) = self.samples {
            s.samples = v;
        }
        if let Some(v) = self.epsilon {
            s.epsilon = v;
        }
        if let Some(v) = self.spread {
            s.spread = v;
        }
        if let Some(v) = self.scenes_per_epoch {
            s.scenes_per_epoch = Some(v);
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// relnet-accuracy, distributions or self-consistency.
    #[arg(long)]
    pub mode: Option<EvalMode>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "CKPT")]
    pub relnet: Option<PathBuf>,
    #[arg(long, value_name = "CKPT")]
    pub spatial: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Cap on evaluated test scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub samples_per_case: Option<usize>,
}

impl EvalArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        self.common.apply(c);
        if let Some(m) = self.mode {
            c.eval.mode = m;
        }
        if let Some(d) = &self.data {
            c.paths.data = Some(d.clone());
        }
        if let Some(p) = &self.relnet {
            c.paths.relnet = Some(p.clone());
        }
        if let Some(p) = &self.spatial {
            c.paths.spatial = Some(p.clone());
        }
        if let Some(n) = self.scenes {
            c.eval.scenes = Some(n);
        }
        if let Some(n) = self.samples_per_case {
            c.eval.samples_per_case = n;
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, value_name = "CKPT")]
    pub relnet: Option<PathBuf>,
    #[arg(long, value_name = "CKPT")]
    pub spatial: Option<PathBuf>,
    /// Directory with a catalog.json; the built-in catalog otherwise.
    #[arg(long, value_name = "DIR")]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub size: Option<[u32; 2]>,
    /// Append each session's rated placements to <DIR>/<session>.jsonl.
    #[arg(long, value_name = "DIR")]
    pub sessions_dir: Option<PathBuf>,
}

impl ServeArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        self.common.apply(c);
        if let Some(p) = self.port {
            c.serve.port = p;
        }
        if let Some(p) = &self.relnet {
            c.paths.relnet = Some(p.clone());
        }
        if let Some(p) = &self.spatial {
            c.paths.spatial = Some(p.clone());
        }
        if let Some(p) = &self.catalog {
            c.paths.catalog = Some(p.clone());
        }
        if let Some(s) = self.size {
            c.image_size = s;
        }
    }
}
