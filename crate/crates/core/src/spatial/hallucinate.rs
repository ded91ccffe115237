use rayon::prelude::*;

use super::loss::{SampleBatch, SampleLocation};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::relnet::{build_input, extract_slice, implant_at_pixel, FeatureSlice, RelNet};
use crate::scenes::{render, AttentionMask, GenerationConfig, ObjectSpec, Rect, SceneSpec, SubjectInstance};

/// A subject object together with its tap-depth feature slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectSlice {
    pub instance: SubjectInstance,
    pub slice: FeatureSlice,
}

/// Renders the subject alone in the middle of an empty table, encodes it
/// with an empty reference channel and cuts out its bbox at the tap depth.
pub fn subject_slice(
    relnet: &RelNet<f32>,
    instance: &SubjectInstance,
    width: u32,
    height: u32,
) -> Result<SubjectSlice> {
    let config = GenerationConfig::with_size(width, height);
    let table = crate::scenes::canonical_table(&config);
    let mut scene = SceneSpec::empty(width, height, table, crate::scenes::CANONICAL_PROJECTION);
    let (cx, cy) = (table.x + table.w / 2, table.y + table.h / 2);
    scene.objects.push(ObjectSpec {
        id: 0,
        name: instance.name.clone(),
        shape: instance.shape,
        center: (cx, cy),
        size: instance.size,
        color: instance.color,
        depth_rank: 0,
        support_id: None,
        container_id: None,
    });
    let bbox = scene.objects[0].bbox();
    let image = render(&scene).to_tensor();
    let a_s = relnet.config.mask(bbox, width as usize, height as usize)?;
    let mut input = build_input(relnet.config.input_variant, &image, &a_s, &a_s)?;
    let plane = (width * height) as usize;
    let ch = relnet.config.input_variant.reference_channel();
    input.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().for_each(|x| *x = 0.0);
    let map = relnet.encode_batch(&input, relnet.config.tap_depth)?.remove(0);
    Ok(SubjectSlice { instance: instance.clone(), slice: extract_slice(&map, bbox)? })
}

/// Subject bbox centered on a pixel, and the same bbox clipped to the image.
pub(crate) fn subject_boxes(
    instance: &SubjectInstance,
    u: usize,
    v: usize,
    width: usize,
    height: usize,
) -> Result<(Rect, Rect)> {
    let bbox = Rect::centered((u as i32, v as i32), instance.size);
    let clipped = bbox
        .intersection(&Rect::new(0, 0, width as i32, height as i32))
        .ok_or_else(|| Error::InvalidArgument(format!("location ({u}, {v}) outside the image")))?;
    Ok((bbox, clipped))
}

const CHUNK: usize = 16;

/// Classifier posteriors for the subject hallucinated at each location:
/// subject mask at the location, encode to the tap depth, implant the
/// subject slice there, finish the forward pass.
pub fn hallucination_targets(
    relnet: &RelNet<f32>,
    image: &Tensor<f32>,
    a_o: &AttentionMask,
    subject: &SubjectSlice,
    locations: &[SampleLocation],
) -> Result<SampleBatch> {
    let (_, _, h, w) = image.dims4("hallucination_targets")?;
    let chunks: Vec<Result<Vec<_>>> = locations
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut boxes = Vec::with_capacity(chunk.len());
            for loc in chunk {
                let (bbox, clipped) = subject_boxes(&subject.instance, loc.u, loc.v, w, h)?;
                let a_s = relnet.config.mask(clipped, w, h)?;
                inputs.push(build_input(relnet.config.input_variant, image, a_o, &a_s)?);
                boxes.push(bbox);
            }
            let maps = relnet.encode_batch(&Tensor::stack_batch(&inputs)?, relnet.config.tap_depth)?;
            let implanted = maps
                .iter()
                .zip(&boxes)
                .map(|(m, b)| implant_at_pixel(m, &subject.slice, b))
                .collect::<Result<Vec<_>>>()?;
            relnet.classify_hallucinated_batch(&implanted)
        })
        .collect();
    let mut targets = Vec::with_capacity(locations.len());
    for c in chunks {
        targets.extend(c?);
    }
    Ok(SampleBatch { locations: locations.to_vec(), targets })
}
