use std::io::Cursor;

use super::{wall_thickness, ObjectSpec, SceneSpec, Shape};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const WALL: [u8; 3] = [198, 204, 196];
const TABLE: [u8; 3] = [150, 108, 68];
const NOISE_AMPLITUDE: i32 = 6;

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedScene {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RenderedScene {
    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v as usize * self.width as usize + u as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, u: i32, v: i32, c: [u8; 3]) {
        if u < 0 || v < 0 || u >= self.width as i32 || v >= self.height as i32 {
            return;
        }
        let i = 3 * (v as usize * self.width as usize + u as usize);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// `[1, 3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut data = vec![0.0f32; 3 * w * h];
        for p in 0..w * h {
            for c in 0..3 {
                data[c * w * h + p] = self.pixels[3 * p + c] as f32 / 255.0;
            }
        }
        Tensor::new(&[1, 3, h, w], data).expect("shape matches data")
    }

    pub fn mirrored(&self) -> RenderedScene {
        let mut out = self.clone();
        let w = self.width as usize;
        for v in 0..self.height as usize {
            for u in 0..w {
                let src = 3 * (v * w + u);
                let dst = 3 * (v * w + (w - 1 - u));
                out.pixels[dst..dst + 3].copy_from_slice(&self.pixels[src..src + 3]);
            }
        }
        out
    }
}

fn noise(seed: u64, u: i32, v: i32) -> i32 {
    let mut z = seed ^ ((u as u64) << 32 | (v as u32 as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z % (2 * NOISE_AMPLITUDE as u64 + 1)) as i32 - NOISE_AMPLITUDE
}

fn jitter(c: [u8; 3], n: i32) -> [u8; 3] {
    c.map(|x| (x as i32 + n).clamp(0, 255) as u8)
}

fn shade(c: [u8; 3], factor: f64, offset: f64) -> [u8; 3] {
    c.map(|x| (x as f64 * factor + offset).round().clamp(0.0, 255.0) as u8)
}

/// Rasterizes a scene with the painter's algorithm, far objects first.
pub fn render(scene: &SceneSpec) -> RenderedScene {
    let mut img = RenderedScene {
        width: scene.width,
        height: scene.height,
        pixels: vec![0; 3 * scene.width as usize * scene.height as usize],
    };
    for v in 0..scene.height as i32 {
        for u in 0..scene.width as i32 {
            let base = if scene.table_region.contains(u, v) { TABLE } else { WALL };
            img.put(u, v, jitter(base, noise(scene.seed, u, v)));
        }
    }
    let mut order: Vec<&ObjectSpec> = scene.objects.iter().collect();
    order.sort_by_key(|o| std::cmp::Reverse(o.depth_rank));
    for o in order {
        draw(&mut img, o);
    }
    img
}

fn draw(img: &mut RenderedScene, o: &ObjectSpec) {
    let b = o.bbox();
    let top_face = shade(o.color, 1.15, 28.0);
    match o.shape {
        Shape::Box | Shape::Slab => {
            let face_rows = if o.shape == Shape::Box { (b.h * 2 + 4) / 5 } else { (b.h + 1) / 2 };
            for v in b.y..b.bottom() {
                for u in b.x..b.right() {
                    img.put(u, v, if v < b.y + face_rows { top_face } else { o.color });
                }
            }
        }
        Shape::Disk => {
            let (cx, cy) = b.center();
            let (rx, ry) = (b.w as f64 / 2.0, b.h as f64 / 2.0);
            for v in b.y..b.bottom() {
                for u in b.x..b.right() {
                    let d = ((u as f64 - cx) / rx).powi(2) + ((v as f64 - cy) / ry).powi(2);
                    if d <= 1.0 {
                        img.put(u, v, if d <= 0.36 { top_face } else { o.color });
                    }
                }
            }
        }
        Shape::OpenContainer => {
            let t = wall_thickness(b.w);
            let rim = shade(o.color, 0.8, 0.0);
            for v in b.y..b.bottom() {
                for u in b.x..b.right() {
                    let wall = u < b.x + t || u >= b.right() - t || v >= b.bottom() - t;
                    if wall {
                        img.put(u, v, if v == b.y { rim } else { o.color });
                    }
                }
            }
        }
    }
}

pub fn encode_png(img: &RenderedScene) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(Cursor::new(&mut out), img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format("<png>", e.to_string()))?;
        writer.write_image_data(&img.pixels).map_err(|e| Error::format("<png>", e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8], origin: &str) -> Result<RenderedScene> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::format(origin, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(origin, e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(origin, "expected 8-bit RGB"));
    }
    buf.truncate(info.buffer_size());
    Ok(RenderedScene { width: info.width, height: info.height, pixels: buf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_scene, GenerationConfig, Rect};

    #[test]
    fn empty_table_is_table_texture() {
        let scene = SceneSpec::empty(32, 32, Rect::new(2, 10, 28, 20), 1.0);
        let img = render(&scene);
        for v in 10..30 {
            for u in 2..30 {
                let p = img.pixel(u, v);
                for c in 0..3 {
                    assert!((p[c] as i32 - TABLE[c] as i32).abs() <= NOISE_AMPLITUDE);
                }
            }
        }
    }

    #[test]
    fn nearer_object_wins_overlap() {
        let mut scene = SceneSpec::empty(32, 32, Rect::new(0, 0, 32, 32), 1.0);
        for (id, center, color, rank) in [(0u32, (10, 10), [255, 0, 0], 1u32), (1, (12, 12), [0, 0, 255], 0)] {
            scene.objects.push(ObjectSpec {
                id,
                name: "slab".into(),
                shape: Shape::Slab,
                center,
                size: (7, 7),
                color,
                depth_rank: rank,
                support_id: None,
                container_id: None,
            });
        }
        let img = render(&scene);
        assert_eq!(img.pixel(12, 13), [0, 0, 255]);
        assert_eq!(img.pixel(8, 12), [255, 0, 0]);
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let scene = generate_scene(3, &GenerationConfig::with_size(64, 64)).unwrap();
        let img = render(&scene);
        let back = decode_png(&encode_png(&img).unwrap(), "mem").unwrap();
        assert_eq!(img, back);
        assert_eq!(render(&scene), img);
    }
}
