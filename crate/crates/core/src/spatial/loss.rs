use serde::{Deserialize, Serialize};

use crate::diffcore::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::relnet::RelationPosterior;

pub const SOBEL_X: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
pub const SOBEL_Y: [[i32; 3]; 3] = [[1, 2, 1], [0, 0, 0], [-1, -2, -1]];

/// How a sampled residual reaches neighboring pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    /// Sampled pixels only.
    None,
    /// Sampled pixels plus their 8-neighborhood, weighted by the Sobel stencil.
    #[default]
    Sobel,
}

impl std::str::FromStr for Spread {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Spread::None),
            "sobel" => Ok(Spread::Sobel),
            _ => Err(Error::InvalidArgument(format!("unknown spread {s:?} (expected none or sobel)"))),
        }
    }
}

/// Neighbor weight `(|Kx| + |Ky|) / 4`, which is 0.5 at every neighbor and 0 at the center.
fn stencil(dy: usize, dx: usize) -> f64 {
    (SOBEL_X[dy][dx].abs() + SOBEL_Y[dy][dx].abs()) as f64 / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLocation {
    pub u: usize,
    pub v: usize,
    /// Channel whose map produced the sample.
    pub channel: Relation,
}

/// Sampled locations and the classifier posterior at each of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub locations: Vec<SampleLocation>,
    pub targets: Vec<RelationPosterior>,
}

/// Gradient images of a `[H, W]` map: zero-padded cross-correlation with
/// [`SOBEL_X`] and [`SOBEL_Y`].
pub fn sobel<T: Real>(map: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = match *map.shape() {
        [h, w] if h >= 3 && w >= 3 => (h, w),
        ref s => {
            return Err(Error::Shape { op: "sobel", detail: format!("expected [H, W] with H, W >= 3, got {s:?}") })
        }
    };
    let src = map.data();
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (T::zero(), T::zero());
            for (i, (kx_row, ky_row)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = y as isize + i as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for j in 0..3 {
                    let xx = x as isize + j as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let p = src[yy as usize * w + xx as usize];
                    sx += T::of(kx_row[j] as f64) * p;
                    sy += T::of(ky_row[j] as f64) * p;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    Ok((Tensor::new(&[h, w], gx)?, Tensor::new(&[h, w], gy)?))
}

/// Squared error between `Γ(u, v)` and the target posterior summed over the
/// sampled locations. `maps` is the model output `[1, 6, H, W]`.
pub fn spatial_loss<T: Real>(tape: &mut Tape<T>, maps: Var, batch: &SampleBatch, spread: Spread) -> Result<Var> {
    if batch.locations.is_empty() {
        return Err(Error::EmptyDataset("sample batch is empty".into()));
    }
    if batch.locations.len() != batch.targets.len() {
        return Err(Error::Shape { op: "spatial_loss", detail: "locations and targets differ in length".into() });
    }
    let (n, c, h, w) = tape.value(maps).dims4("spatial_loss")?;
    crate::diffcore::tensor_check_axis("spatial_loss", "batch", 1, n)?;
    crate::diffcore::tensor_check_axis("spatial_loss", "channels", Relation::COUNT, c)?;
    let mut pixels = Vec::new();
    let mut targets: Vec<T> = Vec::new();
    let mut weights: Vec<T> = Vec::new();
    for (loc, target) in batch.locations.iter().zip(&batch.targets) {
        if loc.u >= w || loc.v >= h {
            return Err(Error::InvalidArgument(format!("location ({}, {}) outside {w}x{h}", loc.u, loc.v)));
        }
        let mut push = |row: usize, col: usize, weight: f64| {
            pixels.push([0, row, col]);
            targets.extend(target.probabilities.iter().map(|&p| T::of(p)));
            weights.push(T::of(weight));
        };
        push(loc.v, loc.u, 1.0);
        if spread == Spread::Sobel {
            for dy in 0..3 {
                for dx in 0..3 {
                    let weight = stencil(dy, dx);
                    let (row, col) = (loc.v as isize + dy as isize - 1, loc.u as isize + dx as isize - 1);
                    if weight == 0.0 || row < 0 || col < 0 || row >= h as isize || col >= w as isize {
                        continue;
                    }
                    push(row as usize, col as usize, weight);
                }
            }
        }
    }
    let gathered = tape.gather_pixels(maps, &pixels)?;
    tape.weighted_squared_error(gathered, &targets, &weights)
}
