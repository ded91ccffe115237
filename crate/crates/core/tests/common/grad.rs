//! Gradient-check objectives over every tape op and both network losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relplace_core::diffcore::{grad_check, GradCheckReport, Objective, ParamSet, Real, Tape, Tensor, Var};
use relplace_core::relnet::{InputVariant, RelNet, RelNetConfig, RelationPosterior};
use relplace_core::spatial::{spatial_loss, SampleBatch, SampleLocation, SpatialConfig, SpatialModel, Spread};
use relplace_core::{Relation, Result};

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values in a shuffled ladder with gaps of at least `1 / n`, so max-pooling
/// windows never tie and no relu input lies within a finite-difference step of 0.
fn separated(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ladder: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0).collect();
    for i in (1..n).rev() {
        ladder.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, ladder).unwrap()
}

/// Replaces every parameter value with a uniform draw, biases included, so
/// no relu input sits exactly on its kink.
pub fn generic_point(mut params: ParamSet<f64>, scale: f64, seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
    params
}

/// Central differences with h = 1e-3 are meaningless across a relu or
/// max-pool kink; at this point no unit of the networks below lies within h
/// of one. The kink-free sweep further down covers other points.
pub const POINT_SEED: u64 = 3;

fn constant<T: Real>(tape: &mut Tape<T>, t: &Tensor<f64>) -> Var {
    tape.constant(t.cast())
}

/// Reduces any output to a scalar through a fixed random projection.
fn project<T: Real>(tape: &mut Tape<T>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = constant(tape, &random(&shape, seed));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[derive(Clone, Copy, Debug)]
pub enum Case {
    Conv { stride: usize, padding: usize },
    Pool,
    Upsample,
    Relu,
    Sigmoid,
    SoftmaxCrossEntropy,
    Mse,
    GlobalAvgPool,
    Linear,
    Concat,
    AddMul,
    AddConstant,
    GatherWeighted,
}

impl Case {
    pub fn point(self) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let mut add = |name: &str, t: Tensor<f64>| {
            p.add(name, t).unwrap();
        };
        match self {
            Case::Conv { .. } => {
                add("x", random(&[2, 2, 5, 6], 1));
                add("k", random(&[3, 2, 3, 3], 2));
                add("b", random(&[3], 3));
            }
            Case::Pool => add("x", separated(&[2, 2, 6, 6], 4)),
            Case::Upsample | Case::Sigmoid | Case::GlobalAvgPool => add("x", random(&[2, 3, 3, 4], 5)),
            Case::Relu => add("x", separated(&[2, 3, 4, 4], 6)),
            Case::SoftmaxCrossEntropy | Case::Mse => add("x", random(&[3, 6], 7)),
            Case::Linear => {
                add("x", random(&[3, 5], 8));
                add("w", random(&[4, 5], 9));
                add("b", random(&[4], 10));
            }
            Case::Concat | Case::AddMul => {
                add("a", random(&[2, 2, 3, 3], 11));
                add("b", random(&[2, if matches!(self, Case::Concat) { 3 } else { 2 }, 3, 3], 12));
            }
            Case::AddConstant => add("x", random(&[1, 2, 4, 4], 13)),
            Case::GatherWeighted => add("x", random(&[2, 6, 4, 5], 14)),
        }
        p
    }
}

impl Objective for Case {
    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, _params: &ParamSet<T>, v: &[Var]) -> Result<Var> {
        match *self {
            Case::Conv { stride, padding } => {
                let y = tape.conv2d(v[0], v[1], v[2], stride, padding)?;
                project(tape, y, 100)
            }
            Case::Pool => {
                let y = tape.pool_max(v[0], 2, 2)?;
                project(tape, y, 101)
            }
            Case::Upsample => {
                let y = tape.upsample2x(v[0])?;
                project(tape, y, 102)
            }
            Case::Relu => {
                let y = tape.relu(v[0]);
                project(tape, y, 103)
            }
            Case::Sigmoid => {
                let y = tape.sigmoid(v[0]);
                project(tape, y, 104)
            }
            Case::SoftmaxCrossEntropy => {
                let p = tape.softmax(v[0])?;
                let mut onehot = vec![T::zero(); 18];
                for (row, label) in [1, 4, 0].into_iter().enumerate() {
                    onehot[row * 6 + label] = T::one();
                }
                tape.cross_entropy(p, &onehot)
            }
            Case::Mse => {
                let target = random(&[3, 6], 105).cast();
                tape.mse(v[0], &target)
            }
            Case::GlobalAvgPool => {
                let y = tape.global_avg_pool(v[0])?;
                project(tape, y, 106)
            }
            Case::Linear => {
                let y = tape.linear(v[0], v[1], v[2])?;
                project(tape, y, 107)
            }
            Case::Concat => {
                let y = tape.concat_channels(v[0], v[1])?;
                project(tape, y, 108)
            }
            Case::AddMul => {
                let s = tape.add(v[0], v[1])?;
                let y = tape.mul(s, v[0])?;
                project(tape, y, 109)
            }
            Case::AddConstant => {
                let y = tape.add_constant(v[0], &random(&[1, 2, 4, 4], 110).cast())?;
                let y = tape.mul(y, v[0])?;
                Ok(tape.sum(y))
            }
            Case::GatherWeighted => {
                let pixels = [[0, 1, 2], [1, 3, 4], [0, 0, 0], [0, 1, 2]];
                let g = tape.gather_pixels(v[0], &pixels)?;
                let target: Vec<T> = random(&[4, 6], 111).cast::<T>().into_data();
                let weights: Vec<T> = [1.0, 0.5, 0.25, 2.0].iter().map(|&w| T::of(w)).collect();
                tape.weighted_squared_error(g, &target, &weights)
            }
        }
    }
}

pub const CASES: [Case; 14] = [
    Case::Conv { stride: 1, padding: 0 },
    Case::Conv { stride: 2, padding: 1 },
    Case::Pool,
    Case::Upsample,
    Case::Relu,
    Case::Sigmoid,
    Case::SoftmaxCrossEntropy,
    Case::Mse,
    Case::GlobalAvgPool,
    Case::Linear,
    Case::Concat,
    Case::AddMul,
    Case::AddConstant,
    Case::GatherWeighted,
];

pub fn small_relnet_config() -> RelNetConfig {
    RelNetConfig {
        input_variant: InputVariant::Full,
        widths: vec![3, 4, 4],
        convs_per_block: vec![1, 1, 2],
        tap_depth: 2,
        ..RelNetConfig::default()
    }
}

pub struct RelNetLoss {
    pub config: RelNetConfig,
    pub input: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl Objective for RelNetLoss {
    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, _v: &[Var]) -> Result<Var> {
        let net = RelNet::from_params(self.config.clone(), params.clone())?;
        let x = constant(tape, &self.input);
        let logits = net.forward(tape, x, true)?;
        let p = tape.softmax(logits)?;
        let mut onehot = vec![T::zero(); self.labels.len() * Relation::COUNT];
        for (i, &l) in self.labels.iter().enumerate() {
            onehot[i * Relation::COUNT + l] = T::one();
        }
        tape.cross_entropy(p, &onehot)
    }
}

pub struct SpatialLoss {
    pub config: SpatialConfig,
    pub input: Tensor<f64>,
    pub batch: SampleBatch,
    pub spread: Spread,
}

impl Objective for SpatialLoss {
    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, _v: &[Var]) -> Result<Var> {
        let model = SpatialModel::from_params(self.config.clone(), params.clone())?;
        let x = constant(tape, &self.input);
        let maps = model.forward(tape, x, true)?;
        spatial_loss(tape, maps, &self.batch, self.spread)
    }
}

pub fn sample_batch(n: usize, width: usize, height: usize, seed: u64) -> SampleBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut locations = Vec::new();
    let mut targets = Vec::new();
    for i in 0..n {
        locations.push(SampleLocation {
            u: rng.gen_range(0..width),
            v: rng.gen_range(0..height),
            channel: Relation::ALL[i % Relation::COUNT],
        });
        let logits: Vec<f64> = (0..Relation::COUNT).map(|_| rng.gen_range(-2.0..2.0)).collect();
        targets.push(RelationPosterior::from_logits(&logits));
    }
    SampleBatch { locations, targets }
}

/// One objective checked in both precisions at h = 1e-3.
pub struct Checked {
    pub name: String,
    pub components: usize,
    pub f32: GradCheckReport,
    pub f64: GradCheckReport,
}

impl Checked {
    pub fn passes(&self) -> bool {
        self.f32.max_relative_error < 1e-3 && self.f64.max_relative_error < 1e-5
    }
}

fn check<O: Objective>(name: String, objective: &O, point: &ParamSet<f64>) -> Checked {
    Checked {
        name,
        components: point.element_count(),
        f32: grad_check::<f32, _>(objective, point, 1e-3).unwrap(),
        f64: grad_check::<f64, _>(objective, point, 1e-3).unwrap(),
    }
}

pub fn op_checks() -> Vec<Checked> {
    CASES.iter().map(|c| check(format!("{c:?}"), c, &c.point())).collect()
}

pub fn relnet_check() -> Checked {
    let config = small_relnet_config();
    let point = generic_point(RelNet::<f64>::new(config.clone(), 3).unwrap().params, 0.5, POINT_SEED);
    let objective = RelNetLoss { config, input: random(&[2, 5, 12, 12], 20), labels: vec![2, 5] };
    check("relnet loss".into(), &objective, &point)
}

pub fn spatial_configs() -> [(SpatialConfig, usize); 2] {
    [
        (SpatialConfig { widths: [2, 3, 3], context_width: 0, output_width: 2, ..SpatialConfig::default() }, 8),
        (SpatialConfig { widths: [2, 2, 3], context_width: 2, output_width: 2, ..SpatialConfig::default() }, 32),
    ]
}

pub fn spatial_checks() -> Vec<Checked> {
    let mut out = Vec::new();
    for (config, side) in spatial_configs() {
        let point = generic_point(SpatialModel::<f64>::new(config.clone(), 5).unwrap().params, 0.5, POINT_SEED);
        for spread in [Spread::None, Spread::Sobel] {
            let objective = SpatialLoss {
                config: config.clone(),
                input: random(&[1, 4, side, side], 21),
                batch: sample_batch(6, side, side, 22),
                spread,
            };
            out.push(check(format!("spatial loss {side}px {spread:?}"), &objective, &point));
        }
    }
    out
}
