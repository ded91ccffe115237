use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{
    centroid_distance, iou_at, js_divergence, kl_divergence, kruskal_wallis, mode_distance, Grid,
    GroundTruthDistribution, KW_SIGNIFICANCE,
};
use crate::error::{Error, Result};
use crate::relation::Relation;
use crate::spatial::PlacementMaps;

pub const IOU_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// IoU at each of [`IOU_THRESHOLDS`].
    pub iou: [f64; 3],
    pub mode_distance: f64,
    pub centroid_distance: f64,
    pub kl: f64,
    pub js: f64,
    /// Fraction of cases where neither per-axis test rejects at p < 0.05.
    pub kw_agreement_rate: f64,
}

impl MetricRow {
    fn mean(rows: &[MetricRow]) -> MetricRow {
        let n = rows.len().max(1) as f64;
        let mut out = MetricRow::default();
        for r in rows {
            for t in 0..3 {
                out.iou[t] += r.iou[t] / n;
            }
            out.mode_distance += r.mode_distance / n;
            out.centroid_distance += r.centroid_distance / n;
            out.kl += r.kl / n;
            out.js += r.js / n;
            out.kw_agreement_rate += r.kw_agreement_rate / n;
        }
        out
    }

    fn values(&self) -> [f64; 8] {
        [
            self.iou[0],
            self.iou[1],
            self.iou[2],
            self.mode_distance,
            self.centroid_distance,
            self.kl,
            self.js,
            self.kw_agreement_rate,
        ]
    }
}

const METRIC_NAMES: [&str; 8] = ["iou@0.25", "iou@0.5", "iou@0.75", "mode_px", "centroid_px", "kl", "js", "kw_same"];

/// Metrics of one predicted channel against one ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub scene_id: Option<u32>,
    pub reference_id: Option<u32>,
    pub relation: Relation,
    pub metrics: MetricRow,
}

/// Per-relation means over cases plus their mean over relations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<(Relation, usize, MetricRow)>,
    pub mean: MetricRow,
    pub skipped: Vec<Relation>,
    pub cases: Vec<CaseMetrics>,
}

fn draw_points<R: Rng>(g: &Grid, n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let dist = WeightedIndex::new(&g.values).map_err(|e| Error::InvalidArgument(format!("cannot sample map: {e}")))?;
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let i = dist.sample(rng);
        xs.push((i % g.width) as f64);
        ys.push((i / g.width) as f64);
    }
    Ok((xs, ys))
}

/// Channel of `maps` as a grid, zeroed outside `allowed`.
pub(crate) fn channel_grid(maps: &PlacementMaps, r: Relation, allowed: Option<&[bool]>) -> Grid {
    let values = maps
        .channel(r)
        .iter()
        .enumerate()
        .map(|(i, &x)| if allowed.map_or(true, |a| a[i]) { x as f64 } else { 0.0 })
        .collect();
    Grid { width: maps.width(), height: maps.height(), values }
}

/// Metrics for one predicted map against one ground truth.
pub fn case_metrics<R: Rng>(pred: &Grid, gt: &Grid, kw_samples: usize, rng: &mut R) -> Result<MetricRow> {
    let mut iou = [0.0; 3];
    for (slot, t) in iou.iter_mut().zip(IOU_THRESHOLDS) {
        *slot = iou_at(pred, gt, t)?;
    }
    let (gx, gy) = draw_points(gt, kw_samples, rng)?;
    let (px, py) = draw_points(pred, kw_samples, rng)?;
    let same = kruskal_wallis(&gx, &px)?.p >= KW_SIGNIFICANCE && kruskal_wallis(&gy, &py)?.p >= KW_SIGNIFICANCE;
    Ok(MetricRow {
        iou,
        mode_distance: mode_distance(pred, gt)?,
        centroid_distance: centroid_distance(pred, gt)?,
        kl: kl_divergence(gt, pred)?,
        js: js_divergence(pred, gt)?,
        kw_agreement_rate: if same { 1.0 } else { 0.0 },
    })
}

/// Per-case metrics for every relation that has a ground truth; the
/// relations without one are returned separately.
pub fn evaluate_cases<R: Rng>(
    pred: &PlacementMaps,
    gt: &[Option<GroundTruthDistribution>; Relation::COUNT],
    allowed: Option<&[bool]>,
    kw_samples: usize,
    rng: &mut R,
) -> Result<(Vec<CaseMetrics>, Vec<Relation>)> {
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for r in Relation::ALL {
        let Some(truth) = &gt[r.index()] else {
            skipped.push(r);
            continue;
        };
        if truth.dense.width != pred.width() || truth.dense.height != pred.height() {
            return Err(Error::Shape {
                op: "evaluate",
                detail: format!("ground truth for {r} has different dimensions"),
            });
        }
        let grid = channel_grid(pred, r, allowed);
        let metrics = case_metrics(&grid, &truth.dense, kw_samples, rng)?;
        cases.push(CaseMetrics { scene_id: None, reference_id: None, relation: r, metrics });
    }
    Ok((cases, skipped))
}

/// Scores one set of predicted maps against per-relation ground truths.
pub fn evaluate<R: Rng>(
    pred: &PlacementMaps,
    gt: &[Option<GroundTruthDistribution>; Relation::COUNT],
    allowed: Option<&[bool]>,
    kw_samples: usize,
    rng: &mut R,
) -> Result<MetricReport> {
    let (cases, _) = evaluate_cases(pred, gt, allowed, kw_samples, rng)?;
    Ok(MetricReport::from_cases(cases))
}

impl MetricReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> MetricReport {
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for r in Relation::ALL {
            let of: Vec<MetricRow> = cases.iter().filter(|c| c.relation == r).map(|c| c.metrics).collect();
            if of.is_empty() {
                skipped.push(r);
            } else {
                rows.push((r, of.len(), MetricRow::mean(&of)));
            }
        }
        let per_relation: Vec<MetricRow> = rows.iter().map(|r| r.2).collect();
        MetricReport { mean: MetricRow::mean(&per_relation), rows, skipped, cases }
    }

    pub fn row(&self, r: Relation) -> Option<&MetricRow> {
        self.rows.iter().find(|x| x.0 == r).map(|x| &x.2)
    }

    /// Metrics as rows and relations as columns, mean first.
    pub fn to_table_json(&self) -> serde_json::Value {
        let mut columns = vec!["mean".to_string()];
        columns.extend(self.rows.iter().map(|r| r.0.name().to_string()));
        let rows: Vec<serde_json::Value> = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let mut values = vec![self.mean.values()[i]];
                values.extend(self.rows.iter().map(|r| r.2.values()[i]));
                json!({ "metric": name, "values": values })
            })
            .collect();
        json!({
            "columns": columns,
            "rows": rows,
            "cases": self.rows.iter().map(|r| json!({ "relation": r.0, "count": r.1 })).collect::<Vec<_>>(),
            "skipped": self.skipped,
            "kw_same_definition": "fraction of cases where per-axis Kruskal-Wallis tests on 2-D samples from both maps do not reject at p < 0.05",
        })
    }

    /// One line per case.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,reference_id,relation");
        for name in METRIC_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for c in &self.cases {
            let id = |x: Option<u32>| x.map(|v| v.to_string()).unwrap_or_default();
            let _ = write!(out, "{},{},{}", id(c.scene_id), id(c.reference_id), c.relation.name());
            for v in c.metrics.values() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
