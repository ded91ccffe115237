use serde_json::json;

use relplace_core::scenes::{build_dataset, GenerationConfig};
use relplace_core::Relation;

use crate::args::GenArgs;
use crate::error::CliError;
use crate::{prepare_out, resolve_config, start_log};

pub fn run(args: &GenArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.common.config.as_deref(), |c| args.apply(c))?;
    let out = prepare_out(args.out.as_ref(), &cfg)?;
    let mut log = start_log(&out, "gen", &cfg, args.common.no_timestamps)?;
    let generation = GenerationConfig::with_size(cfg.image_size[0], cfg.image_size[1]);
    let ds = build_dataset(cfg.scenes, cfg.seed, &generation, &out)
        .map_err(|e| CliError::runtime(format!("writing dataset to {}: {e}", out.display())))?;

    let total = ds.records.len().max(1) as f64;
    let mut census = serde_json::Map::new();
    println!(
        "{} scenes, {} relation pairs, {} regenerated",
        ds.entries.len(),
        ds.records.len(),
        ds.summary.regenerated_scenes
    );
    for r in Relation::ALL {
        let n = ds.summary.relation_counts.get(&r).copied().unwrap_or(0);
        println!("{:<9} {:>7} {:>6.1}%", r.name(), n, 100.0 * n as f64 / total);
        census.insert(r.name().into(), json!(n));
    }
    log.event(
        "census",
        json!({ "scenes": ds.entries.len(), "records": ds.records.len(), "regenerated": ds.summary.regenerated_scenes, "relations": census }),
    )?;
    log.event("end", json!({ "status": "ok" }))
}
