use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scenes::Rect;

/// Intermediate activations `[N_f, H_f, W_f]` of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor<f32>,
    /// Number of blocks that produced the map.
    pub source_depth: usize,
    /// Input pixels per feature cell along each axis.
    pub scale: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

/// A rectangular cut `[N_f, H_s, W_s]` of a feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSlice {
    pub values: Tensor<f32>,
    pub origin_bbox: Rect,
}

impl FeatureSlice {
    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn zeros_like(&self) -> FeatureSlice {
        FeatureSlice { values: Tensor::zeros(self.values.shape()), origin_bbox: self.origin_bbox }
    }
}

/// Feature-grid rectangle covering an image-space bbox, rounded outward.
pub(crate) fn feature_rect(bbox: &Rect, scale: usize) -> Rect {
    let s = scale as i32;
    let x0 = bbox.x.div_euclid(s);
    let y0 = bbox.y.div_euclid(s);
    let x1 = (bbox.right() + s - 1).div_euclid(s).max(x0 + 1);
    let y1 = (bbox.bottom() + s - 1).div_euclid(s).max(y0 + 1);
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

/// Copies the feature cells under `bbox`.
pub fn extract_slice(map: &FeatureMap, bbox: Rect) -> Result<FeatureSlice> {
    let grid = Rect::new(0, 0, map.width() as i32, map.height() as i32);
    let cells = feature_rect(&bbox, map.scale)
        .intersection(&grid)
        .ok_or_else(|| Error::InvalidArgument(format!("bbox {bbox:?} does not touch the feature grid")))?;
    let (c, hf, wf) = (map.channels(), map.height(), map.width());
    let (hs, ws) = (cells.h as usize, cells.w as usize);
    let src = map.values.data();
    let mut data = Vec::with_capacity(c * hs * ws);
    for ch in 0..c {
        for r in 0..hs {
            let row = cells.y as usize + r;
            let start = ch * hf * wf + row * wf + cells.x as usize;
            data.extend_from_slice(&src[start..start + ws]);
        }
    }
    Ok(FeatureSlice { values: Tensor::new(&[c, hs, ws], data)?, origin_bbox: bbox })
}

/// Adds `s` into a copy of `m_o` with its top-left cell at column `u`, row `v`
/// of the feature grid. Parts of the slice outside the grid are dropped.
pub fn implant(m_o: &FeatureMap, s: &FeatureSlice, u: isize, v: isize) -> Result<FeatureMap> {
    let c = m_o.channels();
    crate::diffcore::tensor_check_axis("implant", "channels", c, s.values.shape()[0])?;
    let (hf, wf) = (m_o.height() as isize, m_o.width() as isize);
    let (hs, ws) = (s.height() as isize, s.width() as isize);
    let mut out = m_o.clone();
    let dst = out.values.data_mut();
    let src = s.values.data();
    for ch in 0..c as isize {
        for r in 0..hs {
            let row = v + r;
            if row < 0 || row >= hf {
                continue;
            }
            for k in 0..ws {
                let col = u + k;
                if col < 0 || col >= wf {
                    continue;
                }
                dst[(ch * hf * wf + row * wf + col) as usize] += src[(ch * hs * ws + r * ws + k) as usize];
            }
        }
    }
    Ok(out)
}

/// Implants `s` where a subject with bbox `subject_bbox` (image pixels) would
/// sit: the slice's top-left cell goes to the bbox corner divided by the scale.
pub fn implant_at_pixel(m_o: &FeatureMap, s: &FeatureSlice, subject_bbox: &Rect) -> Result<FeatureMap> {
    let cell = feature_rect(subject_bbox, m_o.scale);
    implant(m_o, s, cell.x as isize, cell.y as isize)
}
