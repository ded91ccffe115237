use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hallucinate::{hallucination_targets, subject_slice, SubjectSlice};
use super::loss::{spatial_loss, SampleLocation, Spread};
use super::sampling::sample_locations;
use super::{spatial_input, PlacementMaps, SpatialConfig, SpatialModel};
use crate::diffcore::{Optimizer, OptimizerKind, Tape};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::relnet::RelNet;
use crate::scenes::{Dataset, Region, Split, SubjectInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialHyper {
    pub lr: f64,
    /// Locations sampled per relation channel and step.
    pub samples: usize,
    pub epsilon: f64,
    pub spread: Spread,
    pub epochs: usize,
    pub seed: u64,
    /// Training scenes visited per epoch (all when unset).
    pub scenes_per_epoch: Option<usize>,
    /// Sample only on the table surface.
    pub restrict_to_table: bool,
}

impl Default for SpatialHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            samples: 20,
            epsilon: 0.1,
            spread: Spread::Sobel,
            epochs: 1,
            seed: 0,
            scenes_per_epoch: None,
            restrict_to_table: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialStepLog {
    pub epoch: usize,
    pub step: u64,
    pub scene_id: u32,
    pub reference_id: u32,
    pub subject: String,
    /// Loss divided by the number of sampled locations.
    pub loss: f64,
}

/// Trains the placement network against a frozen classifier.
pub struct SpatialTrainer<'a> {
    pub model: SpatialModel<f32>,
    pub optimizer: Optimizer<f32>,
    pub hyper: SpatialHyper,
    pub epoch: usize,
    pub log: Vec<SpatialStepLog>,
    relnet: &'a RelNet<f32>,
    data: &'a Dataset,
    subjects: Vec<SubjectSlice>,
    scenes: Vec<u32>,
}

impl<'a> SpatialTrainer<'a> {
    pub fn new(
        config: SpatialConfig,
        hyper: SpatialHyper,
        relnet: &'a RelNet<f32>,
        data: &'a Dataset,
        subjects: &[SubjectInstance],
    ) -> Result<Self> {
        let model = SpatialModel::new(config, hyper.seed)?;
        Self::with_model(model, hyper, relnet, data, subjects)
    }

    pub fn with_model(
        model: SpatialModel<f32>,
        hyper: SpatialHyper,
        relnet: &'a RelNet<f32>,
        data: &'a Dataset,
        subjects: &[SubjectInstance],
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyDataset("no subject objects".into()));
        }
        let scenes: Vec<u32> = data
            .scenes_in(Split::Train)
            .iter()
            .filter(|e| e.scene.objects.iter().any(|o| o.is_on_floor()))
            .map(|e| e.scene_id)
            .collect();
        if scenes.is_empty() {
            return Err(Error::EmptyDataset("no training scenes".into()));
        }
        let first = &data.entries[scenes[0] as usize].scene;
        let subjects =
            subjects.iter().map(|s| subject_slice(relnet, s, first.width, first.height)).collect::<Result<Vec<_>>>()?;
        let optimizer = Optimizer::new(OptimizerKind::Adam, hyper.lr);
        Ok(Self { model, optimizer, hyper, epoch: 0, log: Vec::new(), relnet, data, subjects, scenes })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.hyper.epochs
    }

    pub fn subjects(&self) -> &[SubjectSlice] {
        &self.subjects
    }

    /// One pass over (a subset of) the training scenes; returns the mean step loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.hyper.seed ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
        let mut order = self.scenes.clone();
        order.shuffle(&mut rng);
        order.truncate(self.hyper.scenes_per_epoch.unwrap_or(order.len()).max(1));
        let mut total = 0.0;
        for &scene_id in &order {
            let scene = self.data.scene(scene_id);
            let floor: Vec<u32> = scene.objects.iter().filter(|o| o.is_on_floor()).map(|o| o.id).collect();
            let reference_id = *floor.choose(&mut rng).expect("scene filtered for floor objects");
            let subject = rng.gen_range(0..self.subjects.len());
            let step_seed: u64 = rng.gen();
            total += self.train_step(epoch, scene_id, reference_id, subject, step_seed)?;
        }
        self.epoch = epoch;
        Ok(total / order.len() as f64)
    }

    /// One optimizer step on a single scene/reference/subject triple.
    pub fn train_step(
        &mut self,
        epoch: usize,
        scene_id: u32,
        reference_id: u32,
        subject: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = self.data.scene(scene_id);
        let image = self.data.image(scene_id).to_tensor();
        let (w, h) = (scene.width as usize, scene.height as usize);
        let a_o = self.model.config.mask(scene.object(reference_id)?.bbox(), w, h)?;
        let relnet_mask = self.relnet.config.mask(scene.object(reference_id)?.bbox(), w, h)?;

        let mut tape = Tape::new();
        let x = tape.constant(spatial_input(&image, &a_o)?);
        let out = self.model.forward(&mut tape, x, true)?;
        let value = tape.value(out).clone().reshape(&[crate::relation::Relation::COUNT, h, w])?;
        let maps = PlacementMaps::from_sigmoid(value)?;

        let allowed = self.hyper.restrict_to_table.then(|| Region::Rect(scene.table_region).mask(w, h));
        let mut locations = Vec::with_capacity(Relation::COUNT * self.hyper.samples);
        for r in Relation::ALL {
            for (u, v) in
                sample_locations(&maps, r, self.hyper.samples, self.hyper.epsilon, allowed.as_deref(), &mut rng)?
            {
                locations.push(SampleLocation { u, v, channel: r });
            }
        }
        let batch = hallucination_targets(self.relnet, &image, &relnet_mask, &self.subjects[subject], &locations)?;
        let loss = spatial_loss(&mut tape, out, &batch, self.hyper.spread)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("spatial loss {value} at epoch {epoch}, scene {scene_id}")));
        }
        let grads = tape.backward(loss)?;
        self.model.params.zero_grad();
        tape.accumulate_param_grads(&grads, &mut self.model.params);
        self.optimizer.step(&mut self.model.params)?;
        self.model.params.zero_grad();
        let per_location = value / locations.len() as f64;
        self.log.push(SpatialStepLog {
            epoch,
            step: self.optimizer.steps_taken(),
            scene_id,
            reference_id,
            subject: self.subjects[subject].instance.name.clone(),
            loss: per_location,
        });
        Ok(per_location)
    }
}
