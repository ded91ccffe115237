//! Auxiliary relation classifier with a tappable intermediate feature map,
//! plus feature-slice extraction and implanting.

mod implant;
mod train;

pub use implant::{extract_slice, implant, implant_at_pixel, FeatureMap, FeatureSlice};
pub use train::{accuracy, record_input, Confusion, EpochLog, RelNetHyper, RelNetTrainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{he_uniform, ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::scenes::{attention_mask, binary_mask, AttentionMask, DistanceNormalization, Rect, DEFAULT_SIGMA};

/// Which channels the classifier sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputVariant {
    /// RGB plus Gaussian attention masks.
    #[default]
    Full,
    /// RGB plus binary bbox masks.
    ImageBinaryMasks,
    /// Binary bbox masks only.
    MasksOnly,
}

impl InputVariant {
    pub fn channels(self) -> usize {
        match self {
            InputVariant::Full | InputVariant::ImageBinaryMasks => 5,
            InputVariant::MasksOnly => 2,
        }
    }

    /// Channel holding the reference mask.
    pub fn reference_channel(self) -> usize {
        match self {
            InputVariant::Full | InputVariant::ImageBinaryMasks => 3,
            InputVariant::MasksOnly => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputVariant::Full => "full",
            InputVariant::ImageBinaryMasks => "image_binary_masks",
            InputVariant::MasksOnly => "masks_only",
        }
    }
}

impl std::str::FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InputVariant::Full),
            "image_binary_masks" => Ok(InputVariant::ImageBinaryMasks),
            "masks_only" => Ok(InputVariant::MasksOnly),
            _ => Err(Error::InvalidArgument(format!(
                "unknown input variant {s:?} (expected full, image_binary_masks or masks_only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelNetConfig {
    pub input_variant: InputVariant,
    /// Output channels per block; every block halves the resolution.
    pub widths: Vec<usize>,
    /// 3×3 convolutions per block (the first one has stride 2).
    pub convs_per_block: Vec<usize>,
    pub tap_depth: usize,
    pub sigma: f64,
    pub distance_normalization: DistanceNormalization,
}

impl Default for RelNetConfig {
    fn default() -> Self {
        Self {
            input_variant: InputVariant::Full,
            widths: vec![16, 32, 64, 64],
            convs_per_block: vec![1, 1, 2, 2],
            tap_depth: 3,
            sigma: DEFAULT_SIGMA,
            distance_normalization: DistanceNormalization::Pixels,
        }
    }
}

impl RelNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.convs_per_block.len() {
            return Err(Error::InvalidArgument("widths and convs_per_block must be non-empty and aligned".into()));
        }
        if self.widths.contains(&0) || self.convs_per_block.contains(&0) {
            return Err(Error::InvalidArgument("block widths and depths must be positive".into()));
        }
        if self.tap_depth == 0 || self.tap_depth > self.widths.len() {
            return Err(Error::InvalidArgument(format!(
                "tap depth {} outside 1..={}",
                self.tap_depth,
                self.widths.len()
            )));
        }
        Ok(())
    }

    pub fn tap_channels(&self) -> usize {
        self.widths[self.tap_depth - 1]
    }

    /// Attention mask for a bbox under this configuration.
    pub fn mask(&self, bbox: Rect, width: usize, height: usize) -> Result<AttentionMask> {
        attention_mask(bbox, width, height, self.sigma, self.distance_normalization)
    }
}

/// Softmax posterior over the six relations, in class order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPosterior {
    pub probabilities: [f64; Relation::COUNT],
}

impl RelationPosterior {
    pub fn from_logits(logits: &[f64]) -> Self {
        let mut p = [0.0; Relation::COUNT];
        p.copy_from_slice(&logits[..Relation::COUNT]);
        crate::diffcore::softmax_in_place(&mut p);
        Self { probabilities: p }
    }

    /// Most probable relation; the first one on ties.
    pub fn argmax(&self) -> Relation {
        let mut best = 0;
        for i in 1..Relation::COUNT {
            if self.probabilities[i] > self.probabilities[best] {
                best = i;
            }
        }
        Relation::from_index(best).expect("index in range")
    }

    pub fn probability(&self, r: Relation) -> f64 {
        self.probabilities[r.index()]
    }
}

struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
}

/// The relation classifier `f(x, a_o, a_s)`.
pub struct RelNet<T: Real = f32> {
    pub config: RelNetConfig,
    pub params: ParamSet<T>,
    blocks: Vec<Vec<Conv>>,
    head: (ParamId, ParamId),
}

impl<T: Real> Clone for RelNet<T> {
    fn clone(&self) -> Self {
        Self::from_params(self.config.clone(), self.params.clone()).expect("layout already validated")
    }
}

fn conv_name(block: usize, conv: usize) -> String {
    format!("block{}.conv{}", block + 1, conv + 1)
}

impl<T: Real> RelNet<T> {
    /// Randomly initialized network (He-uniform kernels, zero biases).
    pub fn new(config: RelNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut in_ch = config.input_variant.channels();
        for (b, (&width, &depth)) in config.widths.iter().zip(&config.convs_per_block).enumerate() {
            for c in 0..depth {
                let name = conv_name(b, c);
                params.add(&format!("{name}.weight"), he_uniform(&[width, in_ch, 3, 3], &mut rng))?;
                params.add(&format!("{name}.bias"), Tensor::zeros(&[width]))?;
                in_ch = width;
            }
        }
        params.add("head.weight", he_uniform(&[Relation::COUNT, in_ch], &mut rng))?;
        params.add("head.bias", Tensor::zeros(&[Relation::COUNT]))?;
        Self::from_params(config, params)
    }

    /// Binds a parameter set to the layout implied by `config`.
    pub fn from_params(config: RelNetConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let lookup = |name: String| {
            params.id_of(&name).ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        let mut blocks = Vec::new();
        let mut in_ch = config.input_variant.channels();
        for (b, (&width, &depth)) in config.widths.iter().zip(&config.convs_per_block).enumerate() {
            let mut convs = Vec::new();
            for c in 0..depth {
                let name = conv_name(b, c);
                let weight = lookup(format!("{name}.weight"))?;
                let bias = lookup(format!("{name}.bias"))?;
                let expected = [width, in_ch, 3, 3];
                if params.get(weight).tensor.shape() != expected {
                    return Err(Error::Shape {
                        op: "relnet",
                        detail: format!(
                            "{name}.weight has shape {:?}, expected {expected:?}",
                            params.get(weight).tensor.shape()
                        ),
                    });
                }
                convs.push(Conv { weight, bias, stride: if c == 0 { 2 } else { 1 } });
                in_ch = width;
            }
            blocks.push(convs);
        }
        let head = (lookup("head.weight".into())?, lookup("head.bias".into())?);
        if params.get(head.0).tensor.shape() != [Relation::COUNT, in_ch] {
            return Err(Error::Shape {
                op: "relnet",
                detail: "head.weight does not match the last block width".into(),
            });
        }
        Ok(Self { config, params, blocks, head })
    }

    pub fn cast<U: Real>(&self) -> RelNet<U> {
        RelNet::from_params(self.config.clone(), self.params.cast()).expect("layout already validated")
    }

    /// Sets the classification head to zero, which makes every posterior uniform.
    pub fn zero_head(&mut self) {
        for id in [self.head.0, self.head.1] {
            self.params.get_mut(id).tensor.data_mut().iter_mut().for_each(|w| *w = T::zero());
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    fn leaf(&self, tape: &mut Tape<T>, id: ParamId, trainable: bool) -> Var {
        if trainable {
            tape.param(&self.params, id)
        } else {
            tape.frozen_param(&self.params, id)
        }
    }

    /// Runs blocks `from..to` (0-based, `to` exclusive).
    pub fn forward_blocks(
        &self,
        tape: &mut Tape<T>,
        mut x: Var,
        from: usize,
        to: usize,
        trainable: bool,
    ) -> Result<Var> {
        if from > to || to > self.blocks.len() {
            return Err(Error::InvalidArgument(format!("block range {from}..{to} outside 0..{}", self.blocks.len())));
        }
        for block in &self.blocks[from..to] {
            for conv in block {
                let w = self.leaf(tape, conv.weight, trainable);
                let b = self.leaf(tape, conv.bias, trainable);
                x = tape.conv2d(x, w, b, conv.stride, 1)?;
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Global average pool and linear layer to six logits.
    pub fn forward_head(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Result<Var> {
        let pooled = tape.global_avg_pool(x)?;
        let w = self.leaf(tape, self.head.0, trainable);
        let b = self.leaf(tape, self.head.1, trainable);
        tape.linear(pooled, w, b)
    }

    /// Logits `[N, 6]` for an input batch `[N, C, H, W]`.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, trainable: bool) -> Result<Var> {
        let features = self.forward_blocks(tape, input, 0, self.blocks.len(), trainable)?;
        self.forward_head(tape, features, trainable)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = input.dims4("relnet")?;
        crate::diffcore::tensor_check_axis("relnet", "channels", self.config.input_variant.channels(), c)
    }

    /// Posteriors for a prepared batch `[N, C, H, W]`.
    pub fn classify_batch(&self, input: &Tensor<T>) -> Result<Vec<RelationPosterior>> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let logits = self.forward(&mut tape, x, false)?;
        tape.ensure_finite()?;
        Ok(posteriors(tape.value(logits)))
    }

    /// Posterior for one image `[1, 3, H, W]` and a reference/subject mask pair.
    pub fn classify(&self, image: &Tensor<f32>, a_o: &AttentionMask, a_s: &AttentionMask) -> Result<RelationPosterior> {
        let input = build_input(self.config.input_variant, image, a_o, a_s)?;
        Ok(self.classify_batch(&input.cast())?[0])
    }

    /// Activations after block `d` (1-based).
    pub fn encode_to_depth(
        &self,
        image: &Tensor<f32>,
        a_o: &AttentionMask,
        a_s: &AttentionMask,
        d: usize,
    ) -> Result<FeatureMap> {
        let input = build_input(self.config.input_variant, image, a_o, a_s)?;
        Ok(self.encode_batch(&input, d)?.remove(0))
    }

    /// Activations after block `d` for every item of a prepared batch `[N, C, H, W]`.
    pub fn encode_batch(&self, input: &Tensor<f32>, d: usize) -> Result<Vec<FeatureMap>> {
        if d == 0 || d > self.blocks.len() {
            return Err(Error::InvalidArgument(format!("depth {d} outside 1..={}", self.blocks.len())));
        }
        let input = input.cast::<T>();
        self.check_input(&input)?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let f = self.forward_blocks(&mut tape, x, 0, d, false)?;
        tape.ensure_finite()?;
        let value = tape.value(f);
        let (n, c, h, w) = value.dims4("encode_to_depth")?;
        let per = c * h * w;
        (0..n)
            .map(|i| {
                let data: Vec<f32> = value.data()[i * per..(i + 1) * per].iter().map(|x| x.as_f64() as f32).collect();
                Ok(FeatureMap { values: Tensor::new(&[c, h, w], data)?, source_depth: d, scale: 1 << d })
            })
            .collect()
    }

    /// Continues the forward pass from a (possibly implanted) tap feature map.
    pub fn classify_hallucinated(&self, implanted: &FeatureMap) -> Result<RelationPosterior> {
        Ok(self.classify_hallucinated_batch(std::slice::from_ref(implanted))?[0])
    }

    pub fn classify_hallucinated_batch(&self, maps: &[FeatureMap]) -> Result<Vec<RelationPosterior>> {
        let Some(first) = maps.first() else { return Ok(Vec::new()) };
        for m in maps {
            if m.source_depth != self.config.tap_depth {
                return Err(Error::InvalidArgument(format!(
                    "feature map from depth {} but the tap depth is {}",
                    m.source_depth, self.config.tap_depth
                )));
            }
            if m.values.shape() != first.values.shape() {
                return Err(Error::Shape {
                    op: "classify_hallucinated",
                    detail: "feature maps differ in shape".into(),
                });
            }
        }
        let stacked: Vec<Tensor<T>> = maps
            .iter()
            .map(|m| {
                let s = m.values.shape();
                m.values.cast::<T>().reshape(&[1, s[0], s[1], s[2]])
            })
            .collect::<Result<_>>()?;
        let batch = Tensor::stack_batch(&stacked)?;
        crate::diffcore::tensor_check_axis(
            "classify_hallucinated",
            "channels",
            self.config.tap_channels(),
            batch.shape()[1],
        )?;
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let f = self.forward_blocks(&mut tape, x, self.config.tap_depth, self.blocks.len(), false)?;
        let logits = self.forward_head(&mut tape, f, false)?;
        tape.ensure_finite()?;
        Ok(posteriors(tape.value(logits)))
    }
}

fn posteriors<T: Real>(logits: &Tensor<T>) -> Vec<RelationPosterior> {
    logits
        .data()
        .chunks(Relation::COUNT)
        .map(|row| {
            let row: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
            RelationPosterior::from_logits(&row)
        })
        .collect()
}

/// Stacks image and mask channels for `variant` into `[1, C, H, W]`.
pub fn build_input(
    variant: InputVariant,
    image: &Tensor<f32>,
    a_o: &AttentionMask,
    a_s: &AttentionMask,
) -> Result<Tensor<f32>> {
    let (n, c, h, w) = image.dims4("relnet input")?;
    crate::diffcore::tensor_check_axis("relnet input", "batch", 1, n)?;
    crate::diffcore::tensor_check_axis("relnet input", "channels", 3, c)?;
    for m in [a_o, a_s] {
        crate::diffcore::tensor_check_axis("relnet input", "height", h, m.height)?;
        crate::diffcore::tensor_check_axis("relnet input", "width", w, m.width)?;
    }
    let (mo, ms) = match variant {
        InputVariant::Full => (a_o.to_f32(), a_s.to_f32()),
        _ => (binary_mask(a_o.bbox, w, h), binary_mask(a_s.bbox, w, h)),
    };
    let mut data = Vec::with_capacity(variant.channels() * h * w);
    if variant != InputVariant::MasksOnly {
        data.extend_from_slice(image.data());
    }
    data.extend_from_slice(&mo);
    data.extend_from_slice(&ms);
    Tensor::new(&[1, variant.channels(), h, w], data)
}
