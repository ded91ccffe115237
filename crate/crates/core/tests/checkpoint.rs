use relplace_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use relplace_core::diffcore::{ParamSet, Tensor};
use relplace_core::relnet::{RelNetConfig, RelNetHyper, RelNetTrainer};
use relplace_core::scenes::{Dataset, GenerationConfig};
use relplace_core::spatial::{SpatialConfig, SpatialModel};

fn bits(params: &ParamSet<f32>) -> Vec<(String, Vec<u32>)> {
    params.to_named_f32().into_iter().map(|(n, t)| (n, t.data().iter().map(|x| x.to_bits()).collect())).collect()
}

fn hyper() -> RelNetHyper {
    RelNetHyper { epochs: 2, batch: 8, seed: 4, require_all_labels: false, ..RelNetHyper::default() }
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let data = Dataset::generate(20, 8, &GenerationConfig::with_size(64, 64)).unwrap();
    let mut straight = RelNetTrainer::new(RelNetConfig::default(), hyper(), &data).unwrap();
    straight.run().unwrap();

    let mut first = RelNetTrainer::new(RelNetConfig::default(), hyper(), &data).unwrap();
    first.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("relnet_last");
    let header = CheckpointHeader::for_relnet(&first.model, first.epoch, Some(&first.optimizer));
    save_checkpoint(&base, &header, &first.model.params, Some(&first.optimizer)).unwrap();

    let loaded = load_checkpoint(&dir.path().join("relnet_last.rpt")).unwrap();
    assert_eq!(loaded.header, header);
    let model = loaded.relnet().unwrap();
    assert_eq!(bits(&model.params), bits(&first.model.params));
    let mut resumed = RelNetTrainer::with_model(model, hyper(), &data).unwrap();
    resumed.optimizer = loaded.optimizer(&resumed.model.params).unwrap();
    resumed.epoch = loaded.header.epoch;
    resumed.run().unwrap();

    assert_eq!(resumed.epoch, 2);
    assert_eq!(resumed.log.last(), straight.log.last());
    assert_eq!(bits(&resumed.model.params), bits(&straight.model.params));
}

#[test]
fn spatial_round_trip_predicts_identically() {
    let config = SpatialConfig::default();
    let model = SpatialModel::new(config.clone(), 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("spatial");
    save_checkpoint(&base, &CheckpointHeader::for_spatial(&model, 3, None), &model.params, None).unwrap();
    let loaded = load_checkpoint(&base).unwrap();
    assert_eq!(loaded.header.epoch, 3);
    assert!(loaded.optimizer(&model.params).is_err());
    assert!(loaded.relnet().is_err());
    let back = loaded.spatial().unwrap();

    let image = Tensor::from_fn(&[1, 3, 64, 64], |i| ((i * 37) % 101) as f32 / 101.0);
    let a_o = config.mask(relplace_core::scenes::Rect::new(20, 30, 10, 8), 64, 64).unwrap();
    let (a, b) = (model.predict(&image, &a_o).unwrap(), back.predict(&image, &a_o).unwrap());
    assert_eq!(a.gamma().data(), b.gamma().data());
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_checkpoint(&dir.path().join("absent")).is_err());
}
