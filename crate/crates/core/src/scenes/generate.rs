use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, ObjectTemplate, SubjectInstance};
use super::{ObjectSpec, Rect, SceneSpec};
use crate::error::{Error, Result};

/// Depth-to-image compression of the three simulated viewpoints, from
/// top-down to object-centric.
pub const VIEWPOINT_PROJECTIONS: [f64; 3] = [1.0, 0.8, 0.6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of object counts, stacked and contained objects included.
    pub object_count: (usize, usize),
    pub table_margin: u32,
    pub stack_probability: f64,
    pub containment_probability: f64,
    pub max_retries: usize,
    pub max_regenerations: usize,
    pub catalog: Catalog,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            object_count: (2, 5),
            table_margin: 6,
            stack_probability: 0.7,
            containment_probability: 0.7,
            max_retries: 200,
            max_regenerations: 16,
            catalog: Catalog::default(),
        }
    }
}

impl GenerationConfig {
    pub fn with_size(width: u32, height: u32) -> Self {
        let margin = ((width as f64) / 16.0).round() as u32;
        Self { width, height, table_margin: margin, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.object_count;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!("bad object count range ({lo}, {hi})")));
        }
        if self.width < 16 || self.height < 16 || 2 * self.table_margin + 8 > self.width.min(self.height) {
            return Err(Error::InvalidArgument("image too small for the table margin".into()));
        }
        if self.catalog.small().next().is_none() || self.catalog.supports().next().is_none() {
            return Err(Error::InvalidArgument("catalog needs small and supporting objects".into()));
        }
        Ok(())
    }
}

/// Table rectangle for a viewpoint: physically square, bottom-aligned.
pub(crate) fn table_for(config: &GenerationConfig, projection: f64) -> Rect {
    let m = config.table_margin as i32;
    let w = config.width as i32 - 2 * m;
    let h = ((w as f64 * projection).round() as i32).min(config.height as i32 - 2 * m);
    Rect { x: m, y: config.height as i32 - m - h, w, h }
}

#[derive(Clone, Copy)]
enum Pair {
    Stack,
    Contain,
}

/// Generates a scene deterministically from `seed`.
pub fn generate_scene(seed: u64, config: &GenerationConfig) -> Result<SceneSpec> {
    config.validate()?;
    for attempt in 0..=config.max_regenerations {
        let effective = if attempt == 0 { seed } else { perturb(seed, attempt as u64) };
        if let Some(mut scene) = try_generate(effective, config) {
            scene.seed = seed;
            scene.regenerated = attempt > 0;
            scene.assign_depth_ranks();
            return Ok(scene);
        }
    }
    Err(Error::InvalidArgument(format!(
        "scene {seed}: placement failed after {} regenerations",
        config.max_regenerations
    )))
}

fn perturb(seed: u64, attempt: u64) -> u64 {
    let mut z = seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn try_generate(seed: u64, config: &GenerationConfig) -> Option<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = *VIEWPOINT_PROJECTIONS.choose(&mut rng).expect("non-empty");
    let table = table_for(config, projection);
    let n = rng.gen_range(config.object_count.0..=config.object_count.1);

    let mut checks = [(Pair::Stack, config.stack_probability), (Pair::Contain, config.containment_probability)];
    if rng.gen_bool(0.5) {
        checks.swap(0, 1);
    }
    let has_containers = config.catalog.containers().next().is_some();
    let mut pairs = Vec::new();
    for (kind, p) in checks {
        let usable = !matches!(kind, Pair::Contain) || has_containers;
        if usable && n >= 2 * (pairs.len() + 1) && rng.gen_bool(p.clamp(0.0, 1.0)) {
            pairs.push(kind);
        }
    }

    let catalog = &config.catalog;
    let mut floor_templates: Vec<&ObjectTemplate> = Vec::new();
    for kind in &pairs {
        let pool: Vec<&ObjectTemplate> = match kind {
            Pair::Stack => catalog.supports().collect(),
            Pair::Contain => catalog.containers().collect(),
        };
        floor_templates.push(pool.choose(&mut rng)?);
    }
    let free = n - 2 * pairs.len();
    for _ in 0..free {
        floor_templates.push(catalog.templates.choose(&mut rng)?);
    }

    let mut scene = SceneSpec::empty(config.width, config.height, table, projection);
    let mut next_id = 0u32;
    for template in &floor_templates {
        let inst = template.sample(config.width, &mut rng);
        let placed = place_on_floor(&scene, &table, &inst, config.max_retries, &mut rng)?;
        scene.objects.push(spec_from(next_id, &inst, placed));
        next_id += 1;
    }
    let small: Vec<&ObjectTemplate> = catalog.small().collect();
    for (i, kind) in pairs.iter().enumerate() {
        let host = scene.objects[i].clone();
        let mut inst = small.choose(&mut rng)?.sample(config.width, &mut rng);
        let mut obj = match kind {
            Pair::Stack => {
                let center = place_on_support(&scene, &host, &inst, config.max_retries, &mut rng)?;
                let mut o = spec_from(next_id, &inst, center);
                o.support_id = Some(host.id);
                o
            }
            Pair::Contain => {
                let interior = host.interior()?;
                inst.size.0 = shrink_odd(inst.size.0, interior.w);
                inst.size.1 = shrink_odd(inst.size.1, interior.h);
                let cx = sample_center(interior.x, interior.w, inst.size.0, &mut rng);
                let cy = sample_center(interior.y, interior.h, inst.size.1, &mut rng);
                let mut o = spec_from(next_id, &inst, (cx, cy));
                o.container_id = Some(host.id);
                o
            }
        };
        obj.depth_rank = 0;
        scene.objects.push(obj);
        next_id += 1;
    }
    Some(scene)
}

fn spec_from(id: u32, inst: &SubjectInstance, center: (i32, i32)) -> ObjectSpec {
    ObjectSpec {
        id,
        name: inst.name.clone(),
        shape: inst.shape,
        center,
        size: inst.size,
        color: inst.color,
        depth_rank: 0,
        support_id: None,
        container_id: None,
    }
}

pub(crate) fn shrink_odd(size: i32, limit: i32) -> i32 {
    let limit = if limit % 2 == 0 { limit - 1 } else { limit };
    size.min(limit).max(1)
}

/// Center coordinate for an object of `size` lying fully within `[start, start+extent)`.
fn sample_center<R: Rng>(start: i32, extent: i32, size: i32, rng: &mut R) -> i32 {
    let half = (size - 1) / 2;
    let lo = start + half;
    let hi = start + extent - 1 - half;
    if hi <= lo {
        (lo + hi) / 2
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn place_on_floor<R: Rng>(
    scene: &SceneSpec,
    table: &Rect,
    inst: &SubjectInstance,
    retries: usize,
    rng: &mut R,
) -> Option<(i32, i32)> {
    if inst.size.0 > table.w || inst.size.1 > table.h {
        return None;
    }
    for _ in 0..retries {
        let c = (sample_center(table.x, table.w, inst.size.0, rng), sample_center(table.y, table.h, inst.size.1, rng));
        let bbox = Rect::centered(c, inst.size).inflate(1);
        if scene.objects.iter().all(|o| !o.bbox().intersects(&bbox)) {
            return Some(c);
        }
    }
    None
}

fn place_on_support<R: Rng>(
    scene: &SceneSpec,
    host: &ObjectSpec,
    inst: &SubjectInstance,
    retries: usize,
    rng: &mut R,
) -> Option<(i32, i32)> {
    let hb = host.bbox();
    let image = scene.image_rect();
    // Resting on the top face keeps the footprint over the host when it fits.
    let fits = inst.size.0 <= hb.w && inst.size.1 <= hb.h;
    for _ in 0..retries {
        let c = if fits {
            (sample_center(hb.x, hb.w, inst.size.0, rng), sample_center(hb.y, hb.h, inst.size.1, rng))
        } else {
            (rng.gen_range(hb.x..hb.right()), rng.gen_range(hb.y..hb.bottom()))
        };
        let bbox = Rect::centered(c, inst.size);
        if !image.contains_rect(&bbox) {
            continue;
        }
        let clear = scene.objects.iter().filter(|o| o.id != host.id).all(|o| !o.bbox().intersects(&bbox));
        if clear {
            return Some(c);
        }
    }
    None
}

/// Viewpoint used for subjects rendered on their own.
pub const CANONICAL_PROJECTION: f64 = 0.8;

/// Table rectangle of the canonical viewpoint.
pub fn canonical_table(config: &GenerationConfig) -> Rect {
    table_for(config, CANONICAL_PROJECTION)
}
