use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel_radius_for;
use super::metrics::{spray_to_dense, GroundTruthDistribution};
use super::report::{evaluate_cases, MetricReport};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::scenes::{
    feasible_relations, insert_subject, placement_label, relation_oracle, relation_region, Dataset, Rect, Region,
    RenderedScene, SceneSpec, SubjectInstance,
};
use crate::spatial::{place, PlacementMaps, PlacementStrategy, SpatialModel};

/// Anything that proposes placement maps for a scene and reference object.
pub trait PlacementSource {
    fn maps(&self, scene: &SceneSpec, image: &RenderedScene, reference_id: u32) -> Result<PlacementMaps>;
}

impl PlacementSource for SpatialModel<f32> {
    fn maps(&self, scene: &SceneSpec, image: &RenderedScene, reference_id: u32) -> Result<PlacementMaps> {
        let bbox = scene.object(reference_id)?.bbox();
        let a_o = self.config.mask(bbox, scene.width as usize, scene.height as usize)?;
        self.predict(&image.to_tensor(), &a_o)
    }
}

/// Maps read off the geometric oracle: near one where a placement yields
/// the channel's relation, near zero elsewhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleMaps;

impl PlacementSource for OracleMaps {
    fn maps(&self, scene: &SceneSpec, _image: &RenderedScene, reference_id: u32) -> Result<PlacementMaps> {
        let (w, h) = (scene.width as usize, scene.height as usize);
        let mut data = vec![f32::MIN_POSITIVE; Relation::COUNT * w * h];
        for v in 0..h {
            for u in 0..w {
                if let Some(r) = placement_label(scene, reference_id, u as i32, v as i32)? {
                    data[r.index() * w * h + v * w + u] = 1.0 - f32::EPSILON / 2.0;
                }
            }
        }
        PlacementMaps::new(Tensor::new(&[Relation::COUNT, h, w], data)?)
    }
}

/// Flat maps; sampling from them is uniform placement.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformMaps;

impl PlacementSource for UniformMaps {
    fn maps(&self, scene: &SceneSpec, _image: &RenderedScene, _reference_id: u32) -> Result<PlacementMaps> {
        let (w, h) = (scene.width as usize, scene.height as usize);
        PlacementMaps::new(Tensor::full(&[Relation::COUNT, h, w], 0.5))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfConsistencyConfig {
    pub samples_per_case: usize,
    pub seed: u64,
    /// Only place on the table surface.
    pub restrict_to_table: bool,
}

impl Default for SelfConsistencyConfig {
    fn default() -> Self {
        Self { samples_per_case: 10, seed: 0, restrict_to_table: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistencyReport {
    pub successes: [usize; Relation::COUNT],
    pub trials: [usize; Relation::COUNT],
    /// (scene, reference) pairs visited per relation.
    pub cases: [usize; Relation::COUNT],
}

impl SelfConsistencyReport {
    pub fn rate(&self, r: Relation) -> Option<f64> {
        let t = self.trials[r.index()];
        (t > 0).then(|| self.successes[r.index()] as f64 / t as f64)
    }

    /// Mean of the per-relation rates that have trials.
    pub fn mean_rate(&self) -> f64 {
        let rates: Vec<f64> = Relation::ALL.iter().filter_map(|&r| self.rate(r)).collect();
        rates.iter().sum::<f64>() / rates.len().max(1) as f64
    }
}

/// Floor objects usable as references, with their feasible relations.
fn cases(scene: &SceneSpec) -> Vec<(u32, Vec<Relation>)> {
    scene.objects.iter().filter(|o| o.is_on_floor()).map(|o| (o.id, feasible_relations(o))).collect()
}

/// For every floor reference and feasible relation of every listed scene:
/// sample placements from the relation's map, insert a subject there and
/// check the oracle's verdict.
pub fn self_consistency(
    source: &dyn PlacementSource,
    data: &Dataset,
    scene_ids: &[u32],
    subjects: &[SubjectInstance],
    config: &SelfConsistencyConfig,
) -> Result<SelfConsistencyReport> {
    if subjects.is_empty() {
        return Err(Error::EmptyDataset("no subject objects".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = SelfConsistencyReport::default();
    for &scene_id in scene_ids {
        let scene = data.scene(scene_id);
        let region = config.restrict_to_table.then_some(Region::Rect(scene.table_region));
        for (reference_id, relations) in cases(scene) {
            let maps = source.maps(scene, data.image(scene_id), reference_id)?;
            for r in relations {
                let subject = subjects.choose(&mut rng).expect("non-empty");
                report.cases[r.index()] += 1;
                for _ in 0..config.samples_per_case {
                    let (u, v) = place(&maps, r, PlacementStrategy::Sample, region.as_ref(), &mut rng)?;
                    let (placed, id) = insert_subject(scene, reference_id, subject, u as i32, v as i32)?;
                    report.trials[r.index()] += 1;
                    if relation_oracle(&placed, reference_id, id)? == Some(r) {
                        report.successes[r.index()] += 1;
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Expected success of uniform placement over the table, averaged over the
/// same cases [`self_consistency`] visits (exact pixel census).
pub fn uniform_baseline(data: &Dataset, scene_ids: &[u32]) -> Result<[Option<f64>; Relation::COUNT]> {
    let mut sums = [0.0; Relation::COUNT];
    let mut counts = [0usize; Relation::COUNT];
    for &scene_id in scene_ids {
        let scene = data.scene(scene_id);
        let table = scene.table_region;
        for (reference_id, relations) in cases(scene) {
            let mut hits = [0usize; Relation::COUNT];
            for v in table.y..table.bottom() {
                for u in table.x..table.right() {
                    if let Some(r) = placement_label(scene, reference_id, u, v)? {
                        hits[r.index()] += 1;
                    }
                }
            }
            for r in relations {
                sums[r.index()] += hits[r.index()] as f64 / table.area() as f64;
                counts[r.index()] += 1;
            }
        }
    }
    Ok(std::array::from_fn(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64)))
}

/// Simulated spray annotation: `n_points` uniform draws from the pixels of
/// `within` where the oracle assigns `relation`, densified. `None` when no
/// pixel qualifies.
pub fn oracle_ground_truth<R: Rng>(
    scene: &SceneSpec,
    reference_id: u32,
    relation: Relation,
    within: &Rect,
    n_points: usize,
    kernel_radius: usize,
    rng: &mut R,
) -> Result<Option<GroundTruthDistribution>> {
    let (w, h) = (scene.width as usize, scene.height as usize);
    let region = relation_region(scene, reference_id, relation, within)?;
    let pixels: Vec<usize> = (0..w * h).filter(|&i| region[i]).collect();
    if pixels.is_empty() || n_points == 0 {
        return Ok(None);
    }
    let points: Vec<(usize, usize)> = (0..n_points)
        .map(|_| {
            let i = pixels[rng.gen_range(0..pixels.len())];
            (i % w, i / w)
        })
        .collect();
    spray_to_dense(&points, w, h, kernel_radius).map(Some)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributionConfig {
    /// Simulated spray points per ground-truth distribution.
    pub gt_points: usize,
    /// Points drawn from each map for the Kruskal-Wallis comparison.
    pub kw_samples: usize,
    pub seed: u64,
    /// Ground truth and predictions limited to the table surface.
    pub restrict_to_table: bool,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        Self { gt_points: 100, kw_samples: 200, seed: 0, restrict_to_table: true }
    }
}

/// Scores `source` against oracle ground truths for every floor reference
/// and relation of the listed scenes.
pub fn evaluate_distributions(
    source: &dyn PlacementSource,
    data: &Dataset,
    scene_ids: &[u32],
    config: &DistributionConfig,
) -> Result<MetricReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut all = Vec::new();
    for &scene_id in scene_ids {
        let scene = data.scene(scene_id);
        let (w, h) = (scene.width as usize, scene.height as usize);
        let within = if config.restrict_to_table { scene.table_region } else { scene.image_rect() };
        let allowed = config.restrict_to_table.then(|| Region::Rect(scene.table_region).mask(w, h));
        let radius = kernel_radius_for(w);
        for (reference_id, _) in cases(scene) {
            let maps = source.maps(scene, data.image(scene_id), reference_id)?;
            let mut gt: [Option<GroundTruthDistribution>; Relation::COUNT] = Default::default();
            for r in Relation::ALL {
                gt[r.index()] =
                    oracle_ground_truth(scene, reference_id, r, &within, config.gt_points, radius, &mut rng)?;
            }
            let (mut found, _) = evaluate_cases(&maps, &gt, allowed.as_deref(), config.kw_samples, &mut rng)?;
            for c in &mut found {
                c.scene_id = Some(scene_id);
                c.reference_id = Some(reference_id);
            }
            all.extend(found);
        }
    }
    Ok(MetricReport::from_cases(all))
}
