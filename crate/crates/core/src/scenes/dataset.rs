//! Labelled relation datasets: generation, persistence and loading.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{decode_png, encode_png, render, RenderedScene};
use super::{generate_scene, relation_oracle, GenerationConfig, SceneSpec};
use crate::error::{Error, Result};
use crate::relation::Relation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One labelled pair, as stored in `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub scene_id: u32,
    pub image_file: String,
    pub reference_id: u32,
    pub subject_id: u32,
    pub reference_bbox: [i32; 4],
    pub subject_bbox: [i32; 4],
    pub label: Relation,
    pub split: Split,
}

/// One scene, as stored in `scenes.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: u32,
    pub split: Split,
    pub image_file: String,
    pub scene: SceneSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_scenes: usize,
    pub seed: u64,
    pub relation_counts: BTreeMap<Relation, usize>,
    pub split_scenes: BTreeMap<Split, usize>,
    pub split_records: BTreeMap<Split, usize>,
    pub regenerated_scenes: usize,
    pub config: GenerationConfig,
}

/// Scenes, their rasters and every labelled pair, held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub entries: Vec<SceneEntry>,
    pub records: Vec<RelationRecord>,
    pub images: Vec<RenderedScene>,
    pub summary: DatasetSummary,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

fn scene_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Assigns 70/15/15 train/val/test splits over scene indices.
pub fn split_scenes(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17));
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let mut out = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Every ordered pair the oracle can label.
pub fn scene_records(scene_id: u32, scene: &SceneSpec, image_file: &str, split: Split) -> Result<Vec<RelationRecord>> {
    let mut out = Vec::new();
    for reference in &scene.objects {
        for subject in &scene.objects {
            if reference.id == subject.id {
                continue;
            }
            if let Some(label) = relation_oracle(scene, reference.id, subject.id)? {
                out.push(RelationRecord {
                    scene_id,
                    image_file: image_file.to_string(),
                    reference_id: reference.id,
                    subject_id: subject.id,
                    reference_bbox: reference.bbox().to_array(),
                    subject_bbox: subject.bbox().to_array(),
                    label,
                    split,
                });
            }
        }
    }
    Ok(out)
}

fn image_file(scene_id: u32) -> String {
    format!("images/scene_{scene_id:05}.png")
}

impl Dataset {
    /// Generates and renders `n_scenes` scenes without touching the disk.
    pub fn generate(n_scenes: usize, seed: u64, config: &GenerationConfig) -> Result<Self> {
        let splits = split_scenes(n_scenes, seed);
        let scenes: Vec<SceneSpec> = (0..n_scenes as u64)
            .into_par_iter()
            .map(|i| generate_scene(scene_seed(seed, i), config))
            .collect::<Result<_>>()?;
        let entries: Vec<SceneEntry> = scenes
            .into_iter()
            .enumerate()
            .map(|(i, scene)| SceneEntry {
                scene_id: i as u32,
                split: splits[i],
                image_file: image_file(i as u32),
                scene,
            })
            .collect();
        let images: Vec<RenderedScene> = entries.par_iter().map(|e| render(&e.scene)).collect();
        Self::assemble(entries, images, seed, config.clone())
    }

    fn assemble(
        entries: Vec<SceneEntry>,
        images: Vec<RenderedScene>,
        seed: u64,
        config: GenerationConfig,
    ) -> Result<Self> {
        let mut records = Vec::new();
        for e in &entries {
            records.extend(scene_records(e.scene_id, &e.scene, &e.image_file, e.split)?);
        }
        let mut summary = DatasetSummary {
            n_scenes: entries.len(),
            seed,
            relation_counts: Relation::ALL.iter().map(|r| (*r, 0)).collect(),
            split_scenes: BTreeMap::new(),
            split_records: BTreeMap::new(),
            regenerated_scenes: entries.iter().filter(|e| e.scene.regenerated).count(),
            config,
        };
        for split in [Split::Train, Split::Val, Split::Test] {
            summary.split_scenes.insert(split, entries.iter().filter(|e| e.split == split).count());
            summary.split_records.insert(split, records.iter().filter(|r| r.split == split).count());
        }
        for r in &records {
            *summary.relation_counts.entry(r.label).or_default() += 1;
        }
        Ok(Self { entries, records, images, summary })
    }

    /// Writes images, `manifest.jsonl`, `scenes.jsonl` and `summary.json`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out.join("images"))?;
        let pngs: Vec<Vec<u8>> = self.images.par_iter().map(encode_png).collect::<Result<_>>()?;
        for (e, png) in self.entries.iter().zip(&pngs) {
            fs::write(out.join(&e.image_file), png)?;
        }
        write_jsonl(&out.join(MANIFEST_FILE), &self.records)?;
        write_jsonl(&out.join(SCENES_FILE), &self.entries)?;
        fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let summary: DatasetSummary = serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?;
        let entries: Vec<SceneEntry> = read_jsonl(&dir.join(SCENES_FILE))?;
        let records: Vec<RelationRecord> = read_jsonl(&dir.join(MANIFEST_FILE))?;
        for (i, e) in entries.iter().enumerate() {
            if e.scene_id as usize != i {
                return Err(Error::format(
                    dir.join(SCENES_FILE).display().to_string(),
                    "scene ids must be dense and ordered",
                ));
            }
        }
        let images: Vec<RenderedScene> = entries
            .par_iter()
            .map(|e| {
                let path = dir.join(&e.image_file);
                decode_png(&fs::read(&path)?, &path.display().to_string())
            })
            .collect::<Result<_>>()?;
        if let Some(bad) = records.iter().find(|r| r.scene_id as usize >= entries.len()) {
            return Err(Error::format(
                dir.join(MANIFEST_FILE).display().to_string(),
                format!("unknown scene {}", bad.scene_id),
            ));
        }
        Ok(Self { entries, records, images, summary })
    }

    pub fn scene(&self, scene_id: u32) -> &SceneSpec {
        &self.entries[scene_id as usize].scene
    }

    pub fn image(&self, scene_id: u32) -> &RenderedScene {
        &self.images[scene_id as usize]
    }

    pub fn records_in(&self, split: Split) -> Vec<&RelationRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn scenes_in(&self, split: Split) -> Vec<&SceneEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

/// Generates a dataset and writes it to `out`.
pub fn build_dataset(n_scenes: usize, seed: u64, config: &GenerationConfig, out: &Path) -> Result<Dataset> {
    let ds = Dataset::generate(n_scenes, seed, config)?;
    ds.write(out)?;
    Ok(ds)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}
