use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Floor applied to normalized maps before taking logarithms.
pub const DIVERGENCE_EPSILON: f64 = 1e-10;
/// Significance level of the Kruskal-Wallis agreement count.
pub const KW_SIGNIFICANCE: f64 = 0.05;

/// Row-major `H × W` grid of nonnegative values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape { op: "grid", detail: format!("{} values for {width}x{height}", values.len()) });
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    /// First maximum in row-major order, as `(u, v)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &x) in self.values.iter().enumerate() {
            if x > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn normalized(&self) -> Grid {
        let t = self.total();
        Grid { values: self.values.iter().map(|x| x / t).collect(), ..*self }
    }

    fn same_dims(&self, other: &Grid, op: &'static str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape {
                op,
                detail: format!("{}x{} vs {}x{}", self.width, self.height, other.width, other.height),
            });
        }
        Ok(())
    }
}

/// Dense placement distribution built from annotation points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDistribution {
    pub dense: Grid,
    pub source_points: Vec<(usize, usize)>,
    pub kernel_radius: usize,
}

/// Sums a truncated Gaussian bump (σ = radius / 3) per point and normalizes.
pub fn spray_to_dense(
    points: &[(usize, usize)],
    width: usize,
    height: usize,
    kernel_radius: usize,
) -> Result<GroundTruthDistribution> {
    if points.is_empty() {
        return Err(Error::EmptyDataset("no spray points".into()));
    }
    if let Some(p) = points.iter().find(|p| p.0 >= width || p.1 >= height) {
        return Err(Error::InvalidArgument(format!("spray point {p:?} outside {width}x{height}")));
    }
    let r = kernel_radius as isize;
    let sigma = (kernel_radius as f64 / 3.0).max(f64::MIN_POSITIVE);
    let mut kernel = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= (r * r) as f64 {
                kernel.push((dx, dy, (-d2 / (2.0 * sigma * sigma)).exp()));
            }
        }
    }
    let mut values = vec![0.0; width * height];
    for &(u, v) in points {
        for &(dx, dy, k) in &kernel {
            let (x, y) = (u as isize + dx, v as isize + dy);
            if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                values[y as usize * width + x as usize] += k;
            }
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|x| *x /= total);
    Ok(GroundTruthDistribution { dense: Grid { width, height, values }, source_points: points.to_vec(), kernel_radius })
}

fn binarize(g: &Grid, threshold: f64) -> Vec<bool> {
    let max = g.max();
    g.values.iter().map(|&x| max > 0.0 && x / max >= threshold).collect()
}

/// IoU of the two maps after peak normalization and thresholding.
pub fn iou_at(pred: &Grid, gt: &Grid, threshold: f64) -> Result<f64> {
    pred.same_dims(gt, "iou_at")?;
    let a = binarize(pred, threshold);
    let b = binarize(gt, threshold);
    let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn mode_distance(pred: &Grid, gt: &Grid) -> Result<f64> {
    pred.same_dims(gt, "mode_distance")?;
    let (a, b) = (pred.argmax(), gt.argmax());
    Ok((a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64))
}

/// Probability-weighted mean pixel `(u, v)`.
pub fn centroid(g: &Grid) -> Result<(f64, f64)> {
    let total = g.total();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("centroid of a zero-mass map".into()));
    }
    let (mut cu, mut cv) = (0.0, 0.0);
    for (i, &x) in g.values.iter().enumerate() {
        cu += x * (i % g.width) as f64;
        cv += x * (i / g.width) as f64;
    }
    Ok((cu / total, cv / total))
}

pub fn centroid_distance(pred: &Grid, gt: &Grid) -> Result<f64> {
    pred.same_dims(gt, "centroid_distance")?;
    let (a, b) = (centroid(pred)?, centroid(gt)?);
    Ok((a.0 - b.0).hypot(a.1 - b.1))
}

fn floored(g: &Grid) -> Vec<f64> {
    let total = g.total();
    let n = g.values.len() as f64;
    let p: Vec<f64> =
        g.values.iter().map(|&x| if total > 0.0 { x / total } else { 1.0 / n }.max(DIVERGENCE_EPSILON)).collect();
    let z: f64 = p.iter().sum();
    p.into_iter().map(|x| x / z).collect()
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// `KL(p ‖ q)` in nats after normalization and flooring.
pub fn kl_divergence(p: &Grid, q: &Grid) -> Result<f64> {
    p.same_dims(q, "kl_divergence")?;
    Ok(kl_raw(&floored(p), &floored(q)))
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &Grid, q: &Grid) -> Result<f64> {
    p.same_dims(q, "js_divergence")?;
    let (a, b) = (floored(p), floored(q));
    let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    Ok((0.5 * kl_raw(&a, &m) + 0.5 * kl_raw(&b, &m)).min(std::f64::consts::LN_2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
}

/// Two-group Kruskal-Wallis test with tie correction.
pub fn kruskal_wallis(a: &[f64], b: &[f64]) -> Result<KruskalWallis> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset("Kruskal-Wallis needs two non-empty groups".into()));
    }
    let mut all: Vec<(f64, usize)> = a.iter().map(|&x| (x, 0)).chain(b.iter().map(|&x| (x, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len() as f64;
    let mut rank_sum = [0.0f64; 2];
    let mut ties = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            rank_sum[item.1] += avg;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p: 1.0 });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let h =
        (12.0 / (n * (n + 1.0)) * (rank_sum[0].powi(2) / na + rank_sum[1].powi(2) / nb) - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok(KruskalWallis { h, p: chi.sf(h) })
}
