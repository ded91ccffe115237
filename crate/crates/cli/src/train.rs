use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde_json::json;

use relplace_core::checkpoint::{checkpoint_paths, load_checkpoint, save_checkpoint, CheckpointHeader};
use relplace_core::relnet::{EpochLog, RelNetConfig, RelNetHyper, RelNetTrainer};
use relplace_core::scenes::{Catalog, Dataset, Split};
use relplace_core::spatial::{export_heatmaps, SpatialConfig, SpatialHyper, SpatialTrainer};

use crate::args::{TrainRelnetArgs, TrainSpatialArgs};
use crate::error::CliError;
use crate::runlog::RunLog;
use crate::{load_dataset, prepare_out, require_path, resolve_config, start_log};

pub const RELNET_LAST: &str = "checkpoints/relnet_last";
pub const RELNET_BEST: &str = "checkpoints/relnet_best";
pub const SPATIAL_LAST: &str = "checkpoints/spatial_last";

fn abort(log: &mut RunLog, err: relplace_core::Error, last_good: Option<&str>) -> CliError {
    let _ = log.event("abort", json!({ "error": err.to_string(), "last_checkpoint": last_good }));
    let hint = last_good.map(|p| format!("; last good checkpoint: {p}")).unwrap_or_default();
    CliError::runtime(format!("{err}{hint}"))
}

fn require_checkpoint(base: &Path) -> Result<(), CliError> {
    let (rpt, json) = checkpoint_paths(base);
    for p in [rpt, json] {
        if !p.exists() {
            return Err(CliError::runtime(format!("checkpoint file {} not found", p.display())));
        }
    }
    Ok(())
}

/// Epoch entries already in `log.jsonl`, up to and including `through`.
fn logged_epochs(out: &Path, through: usize) -> Vec<EpochLog> {
    let Ok(file) = std::fs::File::open(out.join("log.jsonl")) else { return Vec::new() };
    let mut by_epoch: Vec<EpochLog> = Vec::new();
    for line in BufReader::new(file).lines().map_while(Result::ok) {
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&line) else { continue };
        if value.get("event").and_then(|e| e.as_str()) != Some("epoch") {
            continue;
        }
        if let Ok(entry) = serde_json::from_value::<EpochLog>(value) {
            if entry.epoch <= through {
                by_epoch.retain(|e| e.epoch != entry.epoch);
                by_epoch.push(entry);
            }
        }
    }
    by_epoch.sort_by_key(|e| e.epoch);
    by_epoch
}

pub fn run_relnet(args: &TrainRelnetArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.common.config.as_deref(), |c| args.apply(c))?;
    let data_dir = require_path(&cfg.paths.data, "--data")?;
    let out = prepare_out(args.out.as_ref(), &cfg)?;
    let data = load_dataset(&data_dir)?;
    let mut log = start_log(&out, "train-relnet", &cfg, args.common.no_timestamps)?;

    let r = &cfg.relnet;
    let hyper = RelNetHyper {
        lr: r.lr,
        epochs: r.epochs,
        batch: r.batch,
        seed: cfg.seed,
        optimizer: r.optimizer,
        momentum: r.momentum,
        mirror_augment: r.mirror_augment,
        early_stop_accuracy: r.early_stop_accuracy,
        require_all_labels: true,
    };
    let model_config = RelNetConfig { input_variant: r.input_variant, ..RelNetConfig::default() };
    let mut trainer = if args.resume {
        resume_relnet(&out, model_config, hyper, &data)?
    } else {
        RelNetTrainer::new(model_config, hyper, &data)?
    };
    log.event("resume", json!({ "enabled": args.resume, "epoch": trainer.epoch }))?;

    let last = out.join(RELNET_LAST);
    let best = out.join(RELNET_BEST);
    let mut last_good = args.resume.then_some(RELNET_LAST);
    while !trainer.finished() {
        let entry = match trainer.run_epoch() {
            Ok(e) => e,
            Err(e) => return Err(abort(&mut log, e, last_good)),
        };
        let score = entry.val_accuracy.unwrap_or(entry.train_accuracy);
        let header =
            CheckpointHeader::for_relnet(&trainer.model, entry.epoch, Some(&trainer.optimizer)).with_score(score);
        save_checkpoint(&last, &header, &trainer.model.params, Some(&trainer.optimizer))?;
        last_good = Some(RELNET_LAST);
        if let Some((best_score, best_epoch, params)) = &trainer.best {
            if *best_epoch == entry.epoch {
                let mut h = CheckpointHeader::for_relnet(&trainer.model, *best_epoch, None).with_score(*best_score);
                h.optimizer_step = trainer.optimizer.steps_taken();
                save_checkpoint(&best, &h, params, None)?;
            }
        }
        log.event("epoch", serde_json::to_value(&entry).expect("serializes"))?;
        println!(
            "epoch {:>3}  loss {:.4}  train {:.3}  val {}",
            entry.epoch,
            entry.train_loss,
            entry.train_accuracy,
            entry.val_accuracy.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    let (best_score, best_epoch) = trainer.best.as_ref().map(|b| (Some(b.0), Some(b.1))).unwrap_or((None, None));
    log.event("end", json!({ "status": "ok", "epochs": trainer.epoch, "best_score": best_score, "best_epoch": best_epoch, "best_checkpoint": RELNET_BEST }))
}

fn resume_relnet<'a>(
    out: &Path,
    config: RelNetConfig,
    hyper: RelNetHyper,
    data: &'a Dataset,
) -> Result<RelNetTrainer<'a>, CliError> {
    let last_path = out.join(RELNET_LAST);
    require_checkpoint(&last_path)?;
    let last = load_checkpoint(&last_path)?;
    let model = last.relnet()?;
    if model.config.input_variant != config.input_variant {
        return Err(CliError::usage(format!(
            "checkpoint was trained with input variant {}, not {}",
            model.config.input_variant.name(),
            config.input_variant.name()
        )));
    }
    let mut trainer = RelNetTrainer::with_model(model, hyper, data)?;
    trainer.optimizer = last.optimizer(&trainer.model.params)?;
    trainer.optimizer.lr = trainer.hyper.lr;
    trainer.epoch = last.header.epoch;
    trainer.log = logged_epochs(out, trainer.epoch);
    let best_path = out.join(RELNET_BEST);
    if checkpoint_paths(&best_path).0.exists() {
        let best = load_checkpoint(&best_path)?;
        let params = best.relnet()?.params;
        trainer.best = best.header.score.map(|s| (s, best.header.epoch, params));
    }
    Ok(trainer)
}

pub fn run_spatial(args: &TrainSpatialArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.common.config.as_deref(), |c| args.apply(c))?;
    let data_dir = require_path(&cfg.paths.data, "--data")?;
    let relnet_path = require_path(&cfg.paths.relnet, "--relnet")?;
    let out = prepare_out(args.out.as_ref(), &cfg)?;
    require_checkpoint(&relnet_path)?;
    let data = load_dataset(&data_dir)?;
    let relnet = load_checkpoint(&relnet_path)?.relnet()?;
    let (w, h) = data
        .entries
        .first()
        .map(|e| (e.scene.width, e.scene.height))
        .ok_or_else(|| CliError::runtime(format!("dataset {} has no scenes", data_dir.display())))?;
    let spatial_config = SpatialConfig::default();
    let g = spatial_config.granularity() as u32;
    if w % g != 0 || h % g != 0 {
        return Err(CliError::runtime(format!(
            "placement network needs image sides divisible by {g}, dataset has {w}x{h}"
        )));
    }
    let mut log = start_log(&out, "train-spatial", &cfg, args.common.no_timestamps)?;

    let s = &cfg.spatial;
    let hyper = SpatialHyper {
        lr: s.lr,
        samples: s.samples,
        epsilon: s.epsilon,
        spread: s.spread,
        epochs: s.epochs,
        seed: cfg.seed,
        scenes_per_epoch: s.scenes_per_epoch,
        restrict_to_table: true,
    };
    let subjects = Catalog::default().subjects(w);
    let mut trainer = SpatialTrainer::new(spatial_config, hyper, &relnet, &data, &subjects)?;
    let last = out.join(SPATIAL_LAST);
    if args.resume {
        require_checkpoint(&last)?;
        let ck = load_checkpoint(&last)?;
        trainer.model = ck.spatial()?;
        trainer.optimizer = ck.optimizer(&trainer.model.params)?;
        trainer.optimizer.lr = trainer.hyper.lr;
        trainer.epoch = ck.header.epoch;
    }
    log.event("resume", json!({ "enabled": args.resume, "epoch": trainer.epoch }))?;

    let snapshot_scene = data
        .scenes_in(Split::Val)
        .into_iter()
        .chain(data.scenes_in(Split::Train))
        .find_map(|e| e.scene.objects.iter().find(|o| o.is_on_floor()).map(|o| (e.scene_id, o.id)));
    let mut last_good = args.resume.then_some(SPATIAL_LAST);
    while !trainer.finished() {
        let before = trainer.log.len();
        let mean = match trainer.run_epoch() {
            Ok(m) => m,
            Err(e) => return Err(abort(&mut log, e, last_good)),
        };
        let header = CheckpointHeader::for_spatial(&trainer.model, trainer.epoch, Some(&trainer.optimizer));
        save_checkpoint(&last, &header, &trainer.model.params, Some(&trainer.optimizer))?;
        last_good = Some(SPATIAL_LAST);
        for step in &trainer.log[before..] {
            log.event("step", serde_json::to_value(step).expect("serializes"))?;
        }
        let mut snapshot: Option<PathBuf> = None;
        if let Some((scene_id, reference_id)) = snapshot_scene {
            let scene = data.scene(scene_id);
            let bbox = scene.object(reference_id)?.bbox();
            let a_o = trainer.model.config.mask(bbox, w as usize, h as usize)?;
            let maps = trainer.model.predict(&data.image(scene_id).to_tensor(), &a_o)?;
            let stem = format!("epoch_{:03}", trainer.epoch);
            export_heatmaps(&maps, &out.join("heatmaps"), &stem, scene_id, reference_id)?;
            snapshot = Some(PathBuf::from("heatmaps").join(format!("{stem}.json")));
        }
        log.event("epoch", json!({ "epoch": trainer.epoch, "mean_loss": mean, "steps": trainer.optimizer.steps_taken(), "heatmaps": snapshot }))?;
        println!("epoch {:>3}  mean loss {:.5}", trainer.epoch, mean);
    }
    log.event("end", json!({ "status": "ok", "epochs": trainer.epoch, "checkpoint": SPATIAL_LAST }))
}
