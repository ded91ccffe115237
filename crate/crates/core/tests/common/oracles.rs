//! Direct codings of the placement loss, the Sobel stencil and the map metrics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use relplace_core::diffcore::{Tape, Tensor};
use relplace_core::eval::Grid;
use relplace_core::relnet::RelationPosterior;
use relplace_core::spatial::{spatial_loss, SampleBatch, SampleLocation, Spread, SOBEL_X, SOBEL_Y};
use relplace_core::Relation;

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Tensor<f64>, SampleBatch) {
    let (h, w) = (rng.gen_range(3..12), rng.gen_range(3..12));
    let gamma = Tensor::from_fn(&[1, 6, h, w], |_| rng.gen_range(0.0..1.0));
    let n = rng.gen_range(1..10);
    let mut locations = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..n {
        locations.push(SampleLocation {
            u: rng.gen_range(0..w),
            v: rng.gen_range(0..h),
            channel: Relation::ALL[rng.gen_range(0..6)],
        });
        let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        targets.push(RelationPosterior::from_logits(&logits));
    }
    (gamma, SampleBatch { locations, targets })
}

/// Σ over sampled (u, v) of Σ over relations of (Γ_r(u, v) − f_r)².
pub fn direct_loss(gamma: &Tensor<f64>, batch: &SampleBatch) -> f64 {
    let mut total = 0.0;
    for (loc, target) in batch.locations.iter().zip(&batch.targets) {
        for r in 0..6 {
            let d = gamma.at(&[0, r, loc.v, loc.u]) - target.probabilities[r];
            total += d * d;
        }
    }
    total
}

/// The same residual also charged at the 8-neighborhood with the Sobel
/// stencil weight (|Kx| + |Ky|) / 4 taken straight from the printed kernels.
pub fn direct_sobel_loss(gamma: &Tensor<f64>, batch: &SampleBatch) -> f64 {
    let (h, w) = (gamma.shape()[2] as isize, gamma.shape()[3] as isize);
    let mut total = 0.0;
    for (loc, target) in batch.locations.iter().zip(&batch.targets) {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (y, x) = (loc.v as isize + dy, loc.u as isize + dx);
                if y < 0 || x < 0 || y >= h || x >= w {
                    continue;
                }
                let (ky, kx) = ((dy + 1) as usize, (dx + 1) as usize);
                let weight =
                    if (dy, dx) == (0, 0) { 1.0 } else { (SOBEL_X[ky][kx].abs() + SOBEL_Y[ky][kx].abs()) as f64 / 4.0 };
                for r in 0..6 {
                    let d = gamma.at(&[0, r, y as usize, x as usize]) - target.probabilities[r];
                    total += weight * d * d;
                }
            }
        }
    }
    total
}

pub fn tape_loss(gamma: &Tensor<f64>, batch: &SampleBatch, spread: Spread) -> f64 {
    let mut tape = Tape::<f64>::new();
    let maps = tape.variable(gamma.clone());
    let loss = spatial_loss(&mut tape, maps, batch, spread).unwrap();
    tape.value(loss).item()
}

pub fn brute_correlation(map: &[Vec<f64>], k: &[[i32; 3]; 3]) -> Vec<Vec<f64>> {
    let (h, w) = (map.len() as isize, map[0].len() as isize);
    let mut out = vec![vec![0.0; w as usize]; h as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..3isize {
                for j in 0..3isize {
                    let (yy, xx) = (y + i - 1, x + j - 1);
                    if yy >= 0 && xx >= 0 && yy < h && xx < w {
                        acc += k[i as usize][j as usize] as f64 * map[yy as usize][xx as usize];
                    }
                }
            }
            out[y as usize][x as usize] = acc;
        }
    }
    out
}

pub const SIDE: usize = 16;

pub fn random_grid(rng: &mut ChaCha8Rng, sparse: bool) -> Grid {
    let values = (0..SIDE * SIDE).map(|_| if sparse && rng.gen_bool(0.6) { 0.0 } else { rng.gen::<f64>() }).collect();
    Grid::new(SIDE, SIDE, values).unwrap()
}

pub fn ref_iou(a: &[f64], b: &[f64], t: f64) -> f64 {
    let ma = a.iter().cloned().fold(0.0, f64::max);
    let mb = b.iter().cloned().fold(0.0, f64::max);
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..a.len() {
        let x = ma > 0.0 && a[i] / ma >= t;
        let y = mb > 0.0 && b[i] / mb >= t;
        if x && y {
            inter += 1.0;
        }
        if x || y {
            union += 1.0;
        }
    }
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}

pub fn ref_argmax(a: &[f64]) -> (f64, f64) {
    let mut best = 0;
    for i in 1..a.len() {
        if a[i] > a[best] {
            best = i;
        }
    }
    ((best % SIDE) as f64, (best / SIDE) as f64)
}

pub fn ref_centroid(a: &[f64]) -> (f64, f64) {
    let mut s = (0.0, 0.0, 0.0);
    for v in 0..SIDE {
        for u in 0..SIDE {
            let x = a[v * SIDE + u];
            s.0 += x;
            s.1 += x * u as f64;
            s.2 += x * v as f64;
        }
    }
    (s.1 / s.0, s.2 / s.0)
}

pub fn ref_floored(a: &[f64]) -> Vec<f64> {
    let total: f64 = a.iter().sum();
    let mut p = Vec::new();
    for &x in a {
        p.push(f64::max(x / total, 1e-10));
    }
    let z: f64 = p.iter().sum();
    p.iter().map(|x| x / z).collect()
}

pub fn ref_kl(a: &[f64], b: &[f64]) -> f64 {
    let (p, q) = (ref_floored(a), ref_floored(b));
    let mut s = 0.0;
    for i in 0..p.len() {
        s += p[i] * (p[i].ln() - q[i].ln());
    }
    s
}

pub fn ref_js(a: &[f64], b: &[f64]) -> f64 {
    let (p, q) = (ref_floored(a), ref_floored(b));
    let mut s = 0.0;
    for i in 0..p.len() {
        let m = 0.5 * (p[i] + q[i]);
        s += 0.5 * p[i] * (p[i] / m).ln() + 0.5 * q[i] * (q[i] / m).ln();
    }
    s
}

/// Quadratic-time ranks and the variance form of H, which carries the tie
/// correction implicitly.
pub fn ref_kw(a: &[f64], b: &[f64]) -> (f64, f64) {
    let all: Vec<f64> = a.iter().chain(b).cloned().collect();
    let n = all.len() as f64;
    let rank = |x: f64| {
        let less = all.iter().filter(|&&y| y < x).count() as f64;
        let equal = all.iter().filter(|&&y| y == x).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = all.iter().map(|&x| rank(x)).collect();
    let mean = (n + 1.0) / 2.0;
    let (ra, rb) = ranks.split_at(a.len());
    let group = |r: &[f64]| r.len() as f64 * (r.iter().sum::<f64>() / r.len() as f64 - mean).powi(2);
    let spread: f64 = ranks.iter().map(|r| (r - mean).powi(2)).sum();
    let h = (n - 1.0) * (group(ra) + group(rb)) / spread;
    (h, erfc((h / 2.0).sqrt()))
}
