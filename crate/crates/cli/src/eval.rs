use std::path::Path;

use serde_json::json;

use relplace_core::checkpoint::load_checkpoint;
use relplace_core::eval::{
    evaluate_distributions, self_consistency, uniform_baseline, DistributionConfig, PlacementSource,
    SelfConsistencyConfig,
};
use relplace_core::relnet::accuracy;
use relplace_core::scenes::{Catalog, Dataset, Split};
use relplace_core::spatial::{export_heatmaps, SpatialModel};
use relplace_core::Relation;

use crate::args::EvalArgs;
use crate::config::{EvalMode, ExperimentConfig};
use crate::error::CliError;
use crate::runlog::RunLog;
use crate::{load_dataset, prepare_out, require_path, resolve_config, start_log};

pub const RELNET_ACCURACY_FILE: &str = "relnet_accuracy.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SELF_CONSISTENCY_FILE: &str = "self_consistency.json";

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.common.config.as_deref(), |c| args.apply(c))?;
    let data_dir = require_path(&cfg.paths.data, "--data")?;
    let out = prepare_out(args.out.as_ref(), &cfg)?;
    let data = load_dataset(&data_dir)?;
    let mut log = start_log(&out, &format!("eval {}", cfg.eval.mode.name()), &cfg, args.common.no_timestamps)?;
    let mut test: Vec<u32> = data.scenes_in(Split::Test).iter().map(|e| e.scene_id).collect();
    if let Some(cap) = cfg.eval.scenes {
        test.truncate(cap);
    }
    if test.is_empty() {
        return Err(CliError::runtime(format!("dataset {} has no test scenes", data_dir.display())));
    }
    match cfg.eval.mode {
        EvalMode::RelnetAccuracy => relnet_accuracy(&cfg, &data, &test, &out, &mut log)?,
        EvalMode::Distributions => distributions(&cfg, &data, &test, &out, &mut log)?,
        EvalMode::SelfConsistency => consistency(&cfg, &data, &test, &out, &mut log)?,
    }
    log.event("end", json!({ "status": "ok" }))
}

fn write(out: &Path, name: &str, text: String) -> Result<(), CliError> {
    let path = out.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("serializes") + "\n"
}

fn load_spatial(cfg: &ExperimentConfig) -> Result<SpatialModel<f32>, CliError> {
    let path = require_path(&cfg.paths.spatial, "--spatial")?;
    Ok(load_checkpoint(&path)?.spatial()?)
}

fn relnet_accuracy(
    cfg: &ExperimentConfig,
    data: &Dataset,
    test: &[u32],
    out: &Path,
    log: &mut RunLog,
) -> Result<(), CliError> {
    let path = require_path(&cfg.paths.relnet, "--relnet")?;
    let model = load_checkpoint(&path)?.relnet()?;
    let records: Vec<_> = data.records.iter().filter(|r| test.binary_search(&r.scene_id).is_ok()).collect();
    let confusion = accuracy(&model, data, &records)?;
    let per_class: serde_json::Map<String, serde_json::Value> =
        Relation::ALL.iter().map(|r| (r.name().to_string(), json!(confusion.class_accuracy(*r)))).collect();
    let report = json!({
        "input_variant": model.config.input_variant.name(),
        "pairs": confusion.total(),
        "accuracy": confusion.accuracy(),
        "class_order": Relation::class_order(),
        "confusion": confusion.counts,
        "per_class_accuracy": per_class,
    });
    write(out, RELNET_ACCURACY_FILE, pretty(&report))?;
    log.event("relnet_accuracy", report.clone())?;
    println!("accuracy {:.4} over {} pairs", confusion.accuracy(), confusion.total());
    for r in Relation::ALL {
        let acc = confusion.class_accuracy(r).map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
        println!("  {:<9} {acc}", r.name());
    }
    Ok(())
}

fn distributions(
    cfg: &ExperimentConfig,
    data: &Dataset,
    test: &[u32],
    out: &Path,
    log: &mut RunLog,
) -> Result<(), CliError> {
    let model = load_spatial(cfg)?;
    let config = DistributionConfig {
        gt_points: cfg.eval.gt_points,
        kw_samples: cfg.eval.kw_samples,
        seed: cfg.seed,
        restrict_to_table: true,
    };
    let report = evaluate_distributions(&model, data, test, &config)?;
    let table = report.to_table_json();
    write(out, METRICS_JSON, pretty(&table))?;
    write(out, METRICS_CSV, report.to_csv())?;
    for &scene_id in test.iter().take(cfg.eval.heatmaps) {
        let scene = data.scene(scene_id);
        if let Some(reference) = scene.objects.iter().find(|o| o.is_on_floor()) {
            let maps = model.maps(scene, data.image(scene_id), reference.id)?;
            let stem = format!("scene_{scene_id:05}_ref{}", reference.id);
            export_heatmaps(&maps, &out.join("heatmaps"), &stem, scene_id, reference.id)?;
        }
    }
    log.event("distributions", json!({ "cases": report.cases.len(), "table": table }))?;
    println!(
        "{} cases; mean IoU@0.25/0.5/0.75 = {:.3} / {:.3} / {:.3}",
        report.cases.len(),
        report.mean.iou[0],
        report.mean.iou[1],
        report.mean.iou[2]
    );
    Ok(())
}

fn consistency(
    cfg: &ExperimentConfig,
    data: &Dataset,
    test: &[u32],
    out: &Path,
    log: &mut RunLog,
) -> Result<(), CliError> {
    let model = load_spatial(cfg)?;
    let width = data.scene(test[0]).width;
    let subjects = Catalog::default().subjects(width);
    let config =
        SelfConsistencyConfig { samples_per_case: cfg.eval.samples_per_case, seed: cfg.seed, restrict_to_table: true };
    let report = self_consistency(&model, data, test, &subjects, &config)?;
    let baseline = uniform_baseline(data, test)?;
    let rows: Vec<serde_json::Value> = Relation::ALL
        .iter()
        .map(|&r| {
            let rate = report.rate(r);
            let chance = baseline[r.index()];
            json!({
                "relation": r,
                "successes": report.successes[r.index()],
                "trials": report.trials[r.index()],
                "rate": rate,
                "uniform_baseline": chance,
                "ratio_to_baseline": rate.zip(chance).filter(|(_, c)| *c > 0.0).map(|(a, c)| a / c),
            })
        })
        .collect();
    let summary = json!({ "scenes": test.len(), "mean_rate": report.mean_rate(), "relations": rows, "report": report });
    write(out, SELF_CONSISTENCY_FILE, pretty(&summary))?;
    log.event("self_consistency", summary)?;
    println!("mean success {:.3}", report.mean_rate());
    for r in Relation::ALL {
        let show = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        println!("  {:<9} {}  (uniform {})", r.name(), show(report.rate(r)), show(baseline[r.index()]));
    }
    Ok(())
}
