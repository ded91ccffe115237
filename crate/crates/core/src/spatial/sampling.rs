use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PlacementMaps;
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::scenes::Region;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementStrategy {
    Argmax,
    #[default]
    Sample,
}

impl std::str::FromStr for PlacementStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(PlacementStrategy::Argmax),
            "sample" => Ok(PlacementStrategy::Sample),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?} (expected argmax or sample)"))),
        }
    }
}

/// Draws `n` distinct indices. Each draw is uniform over the remaining
/// allowed indices with probability `epsilon` (or when the remaining weight
/// is zero), and proportional to `weights` otherwise.
pub fn sample_indices<R: Rng>(
    weights: &[f64],
    n: usize,
    epsilon: f64,
    allowed: Option<&[bool]>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut remaining: Vec<usize> = (0..weights.len()).filter(|&i| allowed.map_or(true, |a| a[i])).collect();
    if remaining.len() < n {
        return Err(Error::InvalidArgument(format!("{n} samples requested from {} pixels", remaining.len())));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let explore = rng.gen::<f64>() < epsilon;
        let total: f64 = remaining.iter().map(|&i| weights[i].max(0.0)).sum();
        let pos = if explore || !(total > 0.0) {
            rng.gen_range(0..remaining.len())
        } else {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = 0;
            for (pos, &i) in remaining.iter().enumerate() {
                let wgt = weights[i].max(0.0);
                if wgt > 0.0 {
                    last_positive = pos;
                }
                acc += wgt;
                if acc > target && wgt > 0.0 {
                    chosen = Some(pos);
                    break;
                }
            }
            chosen.unwrap_or(last_positive)
        };
        out.push(remaining.swap_remove(pos));
    }
    Ok(out)
}

/// Samples `n` distinct pixels `(u, v)` from one channel of `maps`.
pub fn sample_locations<R: Rng>(
    maps: &PlacementMaps,
    channel: Relation,
    n: usize,
    epsilon: f64,
    allowed: Option<&[bool]>,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let weights: Vec<f64> = maps.channel(channel).iter().map(|&x| x as f64).collect();
    let w = maps.width();
    Ok(sample_indices(&weights, n, epsilon, allowed, rng)?.into_iter().map(|i| (i % w, i / w)).collect())
}

/// Chooses a placement pixel for `relation`, restricted to `valid_region`.
pub fn place<R: Rng>(
    maps: &PlacementMaps,
    relation: Relation,
    strategy: PlacementStrategy,
    valid_region: Option<&Region>,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let (w, h) = (maps.width(), maps.height());
    let allowed = valid_region.map(|r| r.mask(w, h));
    let channel = maps.channel(relation);
    let ok = |i: usize| allowed.as_ref().map_or(true, |a| a[i]);
    let index = match strategy {
        PlacementStrategy::Argmax => {
            let mut best: Option<usize> = None;
            for i in 0..channel.len() {
                if ok(i) && best.map_or(true, |b| channel[i] > channel[b]) {
                    best = Some(i);
                }
            }
            best.ok_or(Error::NoFeasiblePlacement)?
        }
        PlacementStrategy::Sample => {
            let weights: Vec<f64> = (0..channel.len()).map(|i| if ok(i) { channel[i] as f64 } else { 0.0 }).collect();
            if !(weights.iter().sum::<f64>() > 0.0) {
                return Err(Error::NoFeasiblePlacement);
            }
            sample_indices(&weights, 1, 0.0, allowed.as_deref(), rng)?[0]
        }
    };
    Ok((index % w, index / w))
}
