//! Procedural tabletop scenes with exact relation labels.
//!
//! Image coordinates: `u` (x) grows to the right, `v` (y) grows toward the
//! viewer. Objects are axis-aligned pixel rectangles with odd side lengths so
//! that every object has an exact center pixel.

mod catalog;
pub mod dataset;
mod generate;
mod geometry;
mod mask;
mod oracle;
mod render;

pub use catalog::{Catalog, ObjectTemplate, SubjectInstance};
pub use dataset::{build_dataset, Dataset, DatasetSummary, RelationRecord, Split};
pub use generate::{canonical_table, generate_scene, GenerationConfig, CANONICAL_PROJECTION, VIEWPOINT_PROJECTIONS};
pub use geometry::{Rect, Region};
pub use mask::{attention_mask, binary_mask, AttentionMask, DistanceNormalization, DEFAULT_SIGMA};
pub use oracle::{
    feasible_relations, insert_subject, placement_label, relation_oracle, relation_region, DEAD_ZONE_RADIUS,
};
pub use render::{decode_png, encode_png, render, RenderedScene};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Disk,
    OpenContainer,
    Slab,
}

impl Shape {
    /// Whether other objects can rest on top of this shape.
    pub fn supports(self) -> bool {
        !matches!(self, Shape::OpenContainer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub name: String,
    pub shape: Shape,
    pub center: (i32, i32),
    /// Width and height in pixels, both odd.
    pub size: (i32, i32),
    pub color: [u8; 3],
    /// Painter order; smaller is nearer to the viewer.
    pub depth_rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container_id: Option<u32>,
}

impl ObjectSpec {
    pub fn bbox(&self) -> Rect {
        Rect::centered(self.center, self.size)
    }

    pub fn is_on_floor(&self) -> bool {
        self.support_id.is_none() && self.container_id.is_none()
    }

    /// Region of a container that holds contained objects.
    pub fn interior(&self) -> Option<Rect> {
        if self.shape != Shape::OpenContainer {
            return None;
        }
        let b = self.bbox();
        let t = wall_thickness(self.size.0);
        Some(Rect { x: b.x + t, y: b.y, w: (b.w - 2 * t).max(1), h: (b.h - t).max(1) })
    }
}

pub(crate) fn wall_thickness(width: i32) -> i32 {
    ((width as f64 * 0.15).round() as i32).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub table_region: Rect,
    pub objects: Vec<ObjectSpec>,
    pub seed: u64,
    /// Image-space compression of table depth (1.0 = top-down).
    pub depth_projection: f64,
    /// Set when placement failed and the scene was rebuilt from a perturbed seed.
    #[serde(default)]
    pub regenerated: bool,
}

impl SceneSpec {
    pub fn empty(width: u32, height: u32, table_region: Rect, depth_projection: f64) -> Self {
        Self { width, height, table_region, objects: Vec::new(), seed: 0, depth_projection, regenerated: false }
    }

    pub fn object(&self, id: u32) -> Result<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id).ok_or(Error::UnknownObject(id))
    }

    pub fn next_id(&self) -> u32 {
        self.objects.iter().map(|o| o.id + 1).max().unwrap_or(0)
    }

    pub fn image_rect(&self) -> Rect {
        Rect { x: 0, y: 0, w: self.width as i32, h: self.height as i32 }
    }

    /// Reassigns painter order: floor objects by the lower edge of their
    /// footprint (far first), a contained object immediately before its
    /// container, a supported object immediately after its support.
    pub fn assign_depth_ranks(&mut self) {
        let mut floor: Vec<&ObjectSpec> = self.objects.iter().filter(|o| o.is_on_floor()).collect();
        floor.sort_by_key(|o| (o.bbox().bottom(), o.id));
        let mut order: Vec<u32> = Vec::with_capacity(self.objects.len());
        fn emit(scene: &SceneSpec, id: u32, order: &mut Vec<u32>) {
            for o in scene.objects.iter().filter(|o| o.container_id == Some(id)) {
                emit(scene, o.id, order);
            }
            order.push(id);
            for o in scene.objects.iter().filter(|o| o.support_id == Some(id)) {
                emit(scene, o.id, order);
            }
        }
        for o in &floor {
            emit(self, o.id, &mut order);
        }
        // Objects whose support chain is broken still need a rank.
        for o in &self.objects {
            if !order.contains(&o.id) {
                order.push(o.id);
            }
        }
        let n = order.len() as u32;
        for (pos, id) in order.iter().enumerate() {
            if let Some(o) = self.objects.iter_mut().find(|o| o.id == *id) {
                o.depth_rank = n - 1 - pos as u32;
            }
        }
    }

    /// Checks the structural invariants of a scene.
    pub fn validate(&self) -> Result<()> {
        let mut ranks: Vec<u32> = self.objects.iter().map(|o| o.depth_rank).collect();
        ranks.sort_unstable();
        ranks.dedup();
        if ranks.len() != self.objects.len() {
            return Err(Error::InvalidArgument("depth ranks are not unique".into()));
        }
        for o in &self.objects {
            if o.size.0 < 1 || o.size.1 < 1 || o.size.0 % 2 == 0 || o.size.1 % 2 == 0 {
                return Err(Error::InvalidArgument(format!("object {} needs odd positive size", o.id)));
            }
            if !o.bbox().intersects(&self.table_region) {
                return Err(Error::InvalidArgument(format!("object {} is off the table", o.id)));
            }
            if o.support_id.is_some() && o.container_id.is_some() {
                return Err(Error::InvalidArgument(format!("object {} both supported and contained", o.id)));
            }
            if let Some(s) = o.support_id {
                if !self.object(s)?.shape.supports() {
                    return Err(Error::InvalidArgument(format!("object {s} cannot support {}", o.id)));
                }
            }
            if let Some(c) = o.container_id {
                let interior = self
                    .object(c)?
                    .interior()
                    .ok_or_else(|| Error::InvalidArgument(format!("object {c} is not a container")))?;
                if !interior.contains_rect(&o.bbox()) {
                    return Err(Error::InvalidArgument(format!("object {} pokes out of container {c}", o.id)));
                }
            }
        }
        Ok(())
    }

    /// Horizontal mirror image of the scene.
    pub fn mirrored(&self) -> SceneSpec {
        let mut out = self.clone();
        let w = self.width as i32;
        out.table_region = self.table_region.mirrored(w);
        for o in &mut out.objects {
            o.center.0 = w - 1 - o.center.0;
        }
        out
    }
}
