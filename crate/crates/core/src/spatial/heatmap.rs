use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PlacementMaps;
use crate::error::{Error, Result};
use crate::relation::Relation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub scene_id: u32,
    pub reference_id: u32,
    pub relation: Relation,
    pub file: String,
    /// Channel maximum; pixel value = round(255 · Γ / normalization).
    pub normalization: f64,
}

pub(crate) fn gray_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(Cursor::new(&mut out), width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format("<png>", e.to_string()))?;
        writer.write_image_data(pixels).map_err(|e| Error::format("<png>", e.to_string()))?;
    }
    Ok(out)
}

/// Grayscale PNG of one channel scaled by its maximum, and that maximum.
pub fn heatmap_png(maps: &PlacementMaps, r: Relation) -> Result<(Vec<u8>, f64)> {
    let ch = maps.channel(r);
    let max = ch.iter().fold(0.0f32, |a, &b| a.max(b)) as f64;
    let pixels: Vec<u8> = ch.iter().map(|&x| (255.0 * x as f64 / max).round().clamp(0.0, 255.0) as u8).collect();
    Ok((gray_png(maps.width(), maps.height(), &pixels)?, max))
}

/// Writes `<stem>_<relation>.png` per channel and `<stem>.json` metadata.
pub fn export_heatmaps(
    maps: &PlacementMaps,
    dir: &Path,
    stem: &str,
    scene_id: u32,
    reference_id: u32,
) -> Result<Vec<HeatmapMeta>> {
    fs::create_dir_all(dir)?;
    let mut metas = Vec::new();
    for r in Relation::ALL {
        let (png, max) = heatmap_png(maps, r)?;
        let file = format!("{stem}_{}.png", r.name());
        fs::write(dir.join(&file), png)?;
        metas.push(HeatmapMeta { scene_id, reference_id, relation: r, file, normalization: max });
    }
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&metas)? + "\n")?;
    Ok(metas)
}
