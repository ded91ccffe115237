use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Shape;

/// Generic household object. Sizes are given for a 64-pixel-wide image and
/// scaled with the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub name: String,
    pub shape: Shape,
    pub width_range: (u32, u32),
    pub height_range: (u32, u32),
    pub color: [u8; 3],
    /// Small objects can be stacked, contained, and used as placement subjects.
    pub small: bool,
}

/// Concrete object waiting to be placed into a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectInstance {
    pub name: String,
    pub shape: Shape,
    pub size: (i32, i32),
    pub color: [u8; 3],
}

pub(crate) const BASE_WIDTH: f64 = 64.0;

pub(crate) fn odd_size(base: f64, scale: f64) -> i32 {
    let v = (base * scale).round().max(1.0) as i32;
    if v % 2 == 0 {
        v - 1
    } else {
        v
    }
}

impl ObjectTemplate {
    fn new(name: &str, shape: Shape, w: (u32, u32), h: (u32, u32), color: [u8; 3], small: bool) -> Self {
        Self { name: name.to_string(), shape, width_range: w, height_range: h, color, small }
    }

    pub fn sample<R: Rng>(&self, image_width: u32, rng: &mut R) -> SubjectInstance {
        let scale = image_width as f64 / BASE_WIDTH;
        let w = rng.gen_range(self.width_range.0..=self.width_range.1) as f64;
        let h = rng.gen_range(self.height_range.0..=self.height_range.1) as f64;
        let mut color = self.color;
        for c in &mut color {
            *c = (*c as i32 + rng.gen_range(-18..=18)).clamp(0, 255) as u8;
        }
        SubjectInstance {
            name: self.name.clone(),
            shape: self.shape,
            size: (odd_size(w, scale), odd_size(h, scale)),
            color,
        }
    }

    /// Mid-range instance with the template's base color.
    pub fn canonical(&self, image_width: u32) -> SubjectInstance {
        let scale = image_width as f64 / BASE_WIDTH;
        let w = (self.width_range.0 + self.width_range.1) as f64 / 2.0;
        let h = (self.height_range.0 + self.height_range.1) as f64 / 2.0;
        SubjectInstance {
            name: self.name.clone(),
            shape: self.shape,
            size: (odd_size(w, scale), odd_size(h, scale)),
            color: self.color,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub templates: Vec<ObjectTemplate>,
}

impl Default for Catalog {
    fn default() -> Self {
        use Shape::*;
        let t = ObjectTemplate::new;
        Self {
            templates: vec![
                t("box", Box, (9, 15), (7, 13), [176, 52, 44], false),
                t("book", Slab, (11, 17), (5, 7), [40, 88, 170], false),
                t("plate", Disk, (11, 17), (7, 11), [226, 226, 236], false),
                t("tray", Slab, (13, 19), (7, 9), [84, 84, 92], false),
                t("bowl", OpenContainer, (11, 17), (9, 13), [236, 176, 36], false),
                t("basket", OpenContainer, (13, 19), (9, 13), [120, 72, 30], false),
                t("pot", OpenContainer, (11, 15), (11, 13), [60, 60, 64], false),
                t("mug", Box, (5, 7), (5, 7), [34, 150, 70], true),
                t("can", Disk, (5, 7), (5, 7), [200, 30, 120], true),
                t("cup", Box, (5, 7), (5, 7), [240, 240, 120], true),
                t("apple", Disk, (5, 5), (5, 5), [210, 20, 20], true),
                t("sponge", Slab, (5, 7), (3, 5), [250, 220, 60], true),
            ],
        }
    }
}

impl Catalog {
    pub fn get(&self, name: &str) -> Option<&ObjectTemplate> {
        self.templates.iter().find(|t| t.name == name)
    }

    pub fn small(&self) -> impl Iterator<Item = &ObjectTemplate> {
        self.templates.iter().filter(|t| t.small)
    }

    pub fn containers(&self) -> impl Iterator<Item = &ObjectTemplate> {
        self.templates.iter().filter(|t| !t.small && t.shape == Shape::OpenContainer)
    }

    pub fn supports(&self) -> impl Iterator<Item = &ObjectTemplate> {
        self.templates.iter().filter(|t| !t.small && t.shape.supports())
    }

    /// Canonical instances of the small templates, the objects that get placed.
    pub fn subjects(&self, image_width: u32) -> Vec<SubjectInstance> {
        self.small().map(|t| t.canonical(image_width)).collect()
    }
}
