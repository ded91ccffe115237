//! Fixtures shared by the benchmarks.

use relplace_core::diffcore::Tensor;
use relplace_core::relnet::RelNetConfig;
use relplace_core::scenes::{AttentionMask, Dataset, GenerationConfig, Rect};

/// One labelled pair from a small generated dataset: image and both masks.
pub struct PairInput {
    pub image: Tensor<f32>,
    pub a_o: AttentionMask,
    pub a_s: AttentionMask,
    pub reference: Rect,
}

pub fn pair_input(size: u32) -> PairInput {
    let data = Dataset::generate(4, 0, &GenerationConfig::with_size(size, size)).expect("dataset");
    let r = &data.records[0];
    let config = RelNetConfig::default();
    let (w, h) = (size as usize, size as usize);
    let bbox = |b: [i32; 4]| Rect::new(b[0], b[1], b[2], b[3]);
    PairInput {
        image: data.image(r.scene_id).to_tensor(),
        a_o: config.mask(bbox(r.reference_bbox), w, h).expect("mask"),
        a_s: config.mask(bbox(r.subject_bbox), w, h).expect("mask"),
        reference: bbox(r.reference_bbox),
    }
}

/// Deterministic values in [-1, 1).
pub fn filled(shape: &[usize], seed: u32) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| {
        ((i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed) >> 8) as f32 / (1u32 << 23) as f32 - 1.0
    })
}
