//! Encoder-decoder predicting one placement map per relation, trained from
//! hallucinated classifier judgements.

mod hallucinate;
mod heatmap;
mod loss;
mod sampling;
mod train;

pub use hallucinate::{hallucination_targets, subject_slice, SubjectSlice};
pub use heatmap::{export_heatmaps, heatmap_png, HeatmapMeta};
pub use loss::{sobel, spatial_loss, SampleBatch, SampleLocation, Spread, SOBEL_X, SOBEL_Y};
pub use sampling::{place, sample_locations, PlacementStrategy};
pub use train::{SpatialHyper, SpatialStepLog, SpatialTrainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{he_uniform, tensor_check_axis, ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::scenes::{attention_mask, AttentionMask, DistanceNormalization, Rect, DEFAULT_SIGMA};

/// Per-pixel, per-relation scores `Γ`, shape `[6, H, W]`, every value in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementMaps {
    gamma: Tensor<f32>,
}

/// Largest `f32` below one.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

impl PlacementMaps {
    pub fn new(gamma: Tensor<f32>) -> Result<Self> {
        let (c, _, _) = dims3(&gamma)?;
        tensor_check_axis("placement maps", "channels", Relation::COUNT, c)?;
        if let Some(bad) = gamma.data().iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidArgument(format!("placement value {bad} outside (0, 1)")));
        }
        Ok(Self { gamma })
    }

    /// Builds maps from sigmoid outputs, pulling saturated values back inside `(0, 1)`.
    pub fn from_sigmoid(mut gamma: Tensor<f32>) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::NonFinite("placement maps".into()));
        }
        gamma.data_mut().iter_mut().for_each(|x| *x = x.clamp(f32::MIN_POSITIVE, BELOW_ONE));
        Self::new(gamma)
    }

    pub fn gamma(&self) -> &Tensor<f32> {
        &self.gamma
    }

    pub fn height(&self) -> usize {
        self.gamma.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.gamma.shape()[2]
    }

    pub fn channel(&self, r: Relation) -> &[f32] {
        let n = self.width() * self.height();
        &self.gamma.data()[r.index() * n..(r.index() + 1) * n]
    }

    pub fn at(&self, r: Relation, u: usize, v: usize) -> f32 {
        self.channel(r)[v * self.width() + u]
    }

    /// Channel as a distribution over pixels (sums to one).
    pub fn normalized(&self, r: Relation) -> Vec<f64> {
        let ch = self.channel(r);
        let total: f64 = ch.iter().map(|&x| x as f64).sum();
        ch.iter().map(|&x| x as f64 / total).collect()
    }
}

fn dims3<T: Real>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Shape { op: "placement maps", detail: format!("expected [C, H, W], got {s:?}") }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialConfig {
    /// Encoder widths at 1/2, 1/4 and 1/8 resolution.
    pub widths: [usize; 3],
    /// Width of the pooled global-context branch (0 disables it).
    pub context_width: usize,
    /// Width of the full-resolution decoder stage.
    pub output_width: usize,
    pub sigma: f64,
    pub distance_normalization: DistanceNormalization,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64],
            context_width: 32,
            output_width: 16,
            sigma: DEFAULT_SIGMA,
            distance_normalization: DistanceNormalization::Pixels,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.output_width == 0 {
            return Err(Error::InvalidArgument("spatial widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial sizes must divide this.
    pub fn granularity(&self) -> usize {
        if self.context_width > 0 {
            32
        } else {
            8
        }
    }

    pub fn mask(&self, bbox: Rect, width: usize, height: usize) -> Result<AttentionMask> {
        attention_mask(bbox, width, height, self.sigma, self.distance_normalization)
    }
}

pub const INPUT_CHANNELS: usize = 4;

/// `g(x, a_o)`: image plus reference mask in, six sigmoid maps out.
pub struct SpatialModel<T: Real = f32> {
    pub config: SpatialConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Clone for SpatialModel<T> {
    fn clone(&self) -> Self {
        Self { config: self.config.clone(), params: self.params.clone() }
    }
}

/// Layer names with `(in, out, kernel)` for a configuration.
fn layout(config: &SpatialConfig) -> Vec<(&'static str, usize, usize, usize)> {
    let [w1, w2, w3] = config.widths;
    let g = config.context_width;
    let mut layers =
        vec![("enc1", INPUT_CHANNELS, w1, 3), ("enc2", w1, w2, 3), ("enc3a", w2, w3, 3), ("enc3b", w3, w3, 3)];
    if g > 0 {
        layers.push(("ctx1", w3, g, 3));
        layers.push(("ctx2", g, g, 3));
        layers.push(("ctx_merge", 2 * g, g, 3));
        layers.push(("fuse", w3 + g, w3, 3));
    }
    layers.extend([
        ("dec3", w3 + w2, w2, 3),
        ("dec2", w2 + w1, w1, 3),
        ("dec1", w1 + INPUT_CHANNELS, config.output_width, 3),
        ("head", config.output_width, Relation::COUNT, 1),
    ]);
    layers
}

impl<T: Real> SpatialModel<T> {
    pub fn new(config: SpatialConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, cin, cout, k) in layout(&config) {
            params.add(&format!("{name}.weight"), he_uniform(&[cout, cin, k, k], &mut rng))?;
            params.add(&format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: SpatialConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        for (name, cin, cout, k) in layout(&config) {
            let id = params
                .id_of(&format!("{name}.weight"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}.weight")))?;
            if params.get(id).tensor.shape() != [cout, cin, k, k] {
                return Err(Error::Shape { op: "spatial", detail: format!("{name}.weight has the wrong shape") });
            }
            params
                .id_of(&format!("{name}.bias"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}.bias")))?;
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> SpatialModel<U> {
        SpatialModel { config: self.config.clone(), params: self.params.cast() }
    }

    fn conv(&self, tape: &mut Tape<T>, name: &str, x: Var, stride: usize, trainable: bool) -> Result<Var> {
        let w = self.id(&format!("{name}.weight"));
        let b = self.id(&format!("{name}.bias"));
        let (w, b) = if trainable {
            (tape.param(&self.params, w), tape.param(&self.params, b))
        } else {
            (tape.frozen_param(&self.params, w), tape.frozen_param(&self.params, b))
        };
        let k = tape.value(w).shape()[2];
        tape.conv2d(x, w, b, stride, k / 2)
    }

    fn id(&self, name: &str) -> ParamId {
        self.params.id_of(name).expect("layout validated at construction")
    }

    fn conv_relu(&self, tape: &mut Tape<T>, name: &str, x: Var, stride: usize, trainable: bool) -> Result<Var> {
        let y = self.conv(tape, name, x, stride, trainable)?;
        Ok(tape.relu(y))
    }

    /// Sigmoid maps `[N, 6, H, W]` for an input batch `[N, 4, H, W]`.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, trainable: bool) -> Result<Var> {
        let (_, c, h, w) = tape.value(input).dims4("spatial")?;
        tensor_check_axis("spatial", "channels", INPUT_CHANNELS, c)?;
        let g = self.config.granularity();
        if h % g != 0 || w % g != 0 {
            return Err(Error::Dimension {
                op: "spatial",
                axis: "height/width",
                expected: g,
                actual: if h % g != 0 { h } else { w },
            });
        }
        let e1 = self.conv_relu(tape, "enc1", input, 2, trainable)?;
        let e2 = self.conv_relu(tape, "enc2", e1, 2, trainable)?;
        let e3 = self.conv_relu(tape, "enc3a", e2, 2, trainable)?;
        let mut e3 = self.conv_relu(tape, "enc3b", e3, 1, trainable)?;
        if self.config.context_width > 0 {
            let p1 = tape.pool_max(e3, 2, 2)?;
            let g1 = self.conv_relu(tape, "ctx1", p1, 1, trainable)?;
            let p2 = tape.pool_max(g1, 2, 2)?;
            let g2 = self.conv_relu(tape, "ctx2", p2, 1, trainable)?;
            let up = tape.upsample2x(g2)?;
            let merged = tape.concat_channels(up, g1)?;
            let m = self.conv_relu(tape, "ctx_merge", merged, 1, trainable)?;
            let up = tape.upsample2x(m)?;
            let fused = tape.concat_channels(e3, up)?;
            e3 = self.conv_relu(tape, "fuse", fused, 1, trainable)?;
        }
        let up = tape.upsample2x(e3)?;
        let cat = tape.concat_channels(up, e2)?;
        let d3 = self.conv_relu(tape, "dec3", cat, 1, trainable)?;
        let up = tape.upsample2x(d3)?;
        let cat = tape.concat_channels(up, e1)?;
        let d2 = self.conv_relu(tape, "dec2", cat, 1, trainable)?;
        let up = tape.upsample2x(d2)?;
        let cat = tape.concat_channels(up, input)?;
        let d1 = self.conv_relu(tape, "dec1", cat, 1, trainable)?;
        let logits = self.conv(tape, "head", d1, 1, trainable)?;
        Ok(tape.sigmoid(logits))
    }
}

/// Stacks image `[1, 3, H, W]` and reference mask into `[1, 4, H, W]`.
pub fn spatial_input(image: &Tensor<f32>, a_o: &AttentionMask) -> Result<Tensor<f32>> {
    let (n, c, h, w) = image.dims4("spatial input")?;
    tensor_check_axis("spatial input", "batch", 1, n)?;
    tensor_check_axis("spatial input", "channels", 3, c)?;
    tensor_check_axis("spatial input", "height", h, a_o.height)?;
    tensor_check_axis("spatial input", "width", w, a_o.width)?;
    let mut data = image.data().to_vec();
    data.extend(a_o.to_f32());
    Tensor::new(&[1, INPUT_CHANNELS, h, w], data)
}

impl SpatialModel<f32> {
    pub fn predict(&self, image: &Tensor<f32>, a_o: &AttentionMask) -> Result<PlacementMaps> {
        let input = spatial_input(image, a_o)?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let out = self.forward(&mut tape, x, false)?;
        tape.ensure_finite()?;
        let (_, c, h, w) = tape.value(out).dims4("spatial")?;
        PlacementMaps::from_sigmoid(tape.take_value(out).reshape(&[c, h, w])?)
    }
}
