use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_input, RelNet, RelNetConfig, RelationPosterior};
use crate::diffcore::{Optimizer, OptimizerKind, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::scenes::{Dataset, Rect, RelationRecord, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelNetHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Heavy-ball momentum for SGD.
    pub momentum: f64,
    /// Random horizontal flips with left/right label swap.
    pub mirror_augment: bool,
    /// Stop once validation accuracy reaches this value.
    pub early_stop_accuracy: Option<f64>,
    pub require_all_labels: bool,
}

impl Default for RelNetHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            batch: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            mirror_augment: true,
            early_stop_accuracy: None,
            require_all_labels: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    /// Mean cross-entropy per training pair.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Classifier input and label for one record, optionally mirrored.
pub fn record_input(
    data: &Dataset,
    record: &RelationRecord,
    config: &RelNetConfig,
    mirrored: bool,
) -> Result<(Tensor<f32>, Relation)> {
    let image = data.image(record.scene_id);
    let (w, h) = (image.width as usize, image.height as usize);
    let mut ref_box = rect(record.reference_bbox);
    let mut subj_box = rect(record.subject_bbox);
    let mut label = record.label;
    let mut tensor = image.to_tensor();
    if mirrored {
        tensor = tensor.flip_horizontal();
        ref_box = ref_box.mirrored(w as i32);
        subj_box = subj_box.mirrored(w as i32);
        label = label.mirrored();
    }
    let a_o = config.mask(ref_box, w, h)?;
    let a_s = config.mask(subj_box, w, h)?;
    Ok((build_input(config.input_variant, &tensor, &a_o, &a_s)?, label))
}

fn rect(b: [i32; 4]) -> Rect {
    Rect::new(b[0], b[1], b[2], b[3])
}

/// Row = true relation, column = predicted relation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; Relation::COUNT]; Relation::COUNT],
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..Relation::COUNT).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    pub fn class_accuracy(&self, r: Relation) -> Option<f64> {
        let row = &self.counts[r.index()];
        let n: usize = row.iter().sum();
        (n > 0).then(|| row[r.index()] as f64 / n as f64)
    }
}

/// Classifies every record (unmirrored) and tallies a confusion matrix.
pub fn accuracy(model: &RelNet<f32>, data: &Dataset, records: &[&RelationRecord]) -> Result<Confusion> {
    const CHUNK: usize = 64;
    let mut confusion = Confusion::default();
    for chunk in records.chunks(CHUNK) {
        let mut inputs = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for r in chunk {
            let (x, y) = record_input(data, r, &model.config, false)?;
            inputs.push(x);
            labels.push(y);
        }
        let posts: Vec<RelationPosterior> = model.classify_batch(&Tensor::stack_batch(&inputs)?)?;
        for (p, y) in posts.iter().zip(labels) {
            confusion.counts[y.index()][p.argmax().index()] += 1;
        }
    }
    Ok(confusion)
}

/// Epoch-wise trainer. All state needed to resume is public.
pub struct RelNetTrainer<'a> {
    pub model: RelNet<f32>,
    pub optimizer: Optimizer<f32>,
    pub hyper: RelNetHyper,
    pub epoch: usize,
    pub log: Vec<EpochLog>,
    /// Best validation accuracy so far, the epoch it was reached and its parameters.
    pub best: Option<(f64, usize, ParamSet<f32>)>,
    data: &'a Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
}

impl<'a> RelNetTrainer<'a> {
    pub fn new(config: RelNetConfig, hyper: RelNetHyper, data: &'a Dataset) -> Result<Self> {
        let model = RelNet::new(config, hyper.seed)?;
        Self::with_model(model, hyper, data)
    }

    pub fn with_model(model: RelNet<f32>, hyper: RelNetHyper, data: &'a Dataset) -> Result<Self> {
        let pick = |split| -> Vec<usize> {
            data.records.iter().enumerate().filter(|(_, r)| r.split == split).map(|(i, _)| i).collect()
        };
        let train = pick(Split::Train);
        let val = pick(Split::Val);
        if train.is_empty() {
            return Err(Error::EmptyDataset("no training records".into()));
        }
        if hyper.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if hyper.require_all_labels {
            for r in Relation::ALL {
                if !train.iter().any(|&i| data.records[i].label == r) {
                    return Err(Error::EmptyDataset(format!("no training records labelled {r}")));
                }
            }
        }
        let optimizer = Optimizer::new(hyper.optimizer, hyper.lr).with_momentum(hyper.momentum);
        Ok(Self { model, optimizer, hyper, epoch: 0, log: Vec::new(), best: None, data, train, val })
    }

    pub fn finished(&self) -> bool {
        if self.epoch >= self.hyper.epochs {
            return true;
        }
        match (self.hyper.early_stop_accuracy, self.log.last().and_then(|l| l.val_accuracy)) {
            (Some(target), Some(acc)) => acc >= target,
            _ => false,
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.hyper.seed ^ (epoch as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        let mut order = self.train.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(self.hyper.batch).enumerate() {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut onehots = Vec::with_capacity(chunk.len() * Relation::COUNT);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mirror = self.hyper.mirror_augment && rng.gen_bool(0.5);
                let (x, y) = record_input(self.data, &self.data.records[i], &self.model.config, mirror)?;
                inputs.push(x);
                let mut oh = [0.0f32; Relation::COUNT];
                oh[y.index()] = 1.0;
                onehots.extend_from_slice(&oh);
                labels.push(y);
            }
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::stack_batch(&inputs)?);
            let logits = self.model.forward(&mut tape, x, true)?;
            let post = tape.softmax(logits)?;
            let loss = tape.cross_entropy(post, &onehots)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() || tape.ensure_finite().is_err() {
                return Err(Error::NonFinite(format!(
                    "relnet loss {value} at epoch {epoch}, step {step}: {}",
                    tape.ensure_finite().err().map(|e| e.to_string()).unwrap_or_default()
                )));
            }
            loss_sum += value;
            for (row, y) in tape.value(post).data().chunks(Relation::COUNT).zip(&labels) {
                let p: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                if (RelationPosterior { probabilities: p.try_into().expect("six classes") }).argmax() == *y {
                    correct += 1;
                }
            }
            let grads = tape.backward(loss)?;
            self.model.params.zero_grad();
            tape.accumulate_param_grads(&grads, &mut self.model.params);
            self.optimizer.step(&mut self.model.params)?;
        }
        self.model.params.zero_grad();
        let val_accuracy = if self.val.is_empty() {
            None
        } else {
            let records: Vec<&RelationRecord> = self.val.iter().map(|&i| &self.data.records[i]).collect();
            Some(accuracy(&self.model, self.data, &records)?.accuracy())
        };
        let score = val_accuracy.unwrap_or(correct as f64 / order.len() as f64);
        if self.best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            self.best = Some((score, epoch, self.model.params.clone()));
        }
        let entry = EpochLog {
            epoch,
            steps: self.optimizer.steps_taken(),
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_accuracy,
        };
        self.epoch = epoch;
        self.log.push(entry.clone());
        Ok(entry)
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Model with the best validation parameters (the current ones if none yet).
    pub fn best_model(&self) -> RelNet<f32> {
        match &self.best {
            Some((_, _, params)) => {
                RelNet::from_params(self.model.config.clone(), params.clone()).expect("same layout")
            }
            None => self.model.clone(),
        }
    }
}
