mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relplace_core::diffcore::Tensor;
use relplace_core::eval::{
    centroid, centroid_distance, evaluate, iou_at, js_divergence, kl_divergence, kruskal_wallis, mode_distance,
    self_consistency, spray_to_dense, uniform_baseline, Grid, OracleMaps, SelfConsistencyConfig, UniformMaps,
};
use relplace_core::scenes::{feasible_relations, relation_region, Catalog, Dataset, GenerationConfig, Split};
use relplace_core::spatial::PlacementMaps;
use relplace_core::Relation;

use common::oracles::*;

fn close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{what}: {a} vs {b}");
}

#[test]
fn metrics_match_straight_line_references_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..60 {
        let sparse = trial % 2 == 1;
        let (p, q) = (random_grid(&mut rng, sparse), random_grid(&mut rng, sparse));
        for t in [0.25, 0.5, 0.75] {
            close(iou_at(&p, &q, t).unwrap(), ref_iou(&p.values, &q.values, t), "iou");
        }
        let (a, b) = (ref_argmax(&p.values), ref_argmax(&q.values));
        close(mode_distance(&p, &q).unwrap(), ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(), "mode");
        let (ca, cb) = (ref_centroid(&p.values), ref_centroid(&q.values));
        close(centroid(&p).unwrap().0, ca.0, "centroid u");
        close(centroid(&p).unwrap().1, ca.1, "centroid v");
        close(centroid_distance(&p, &q).unwrap(), ((ca.0 - cb.0).powi(2) + (ca.1 - cb.1).powi(2)).sqrt(), "cd");
        close(kl_divergence(&p, &q).unwrap(), ref_kl(&p.values, &q.values), "kl");
        close(js_divergence(&p, &q).unwrap(), ref_js(&p.values, &q.values), "js");
    }
}

#[test]
fn kruskal_wallis_matches_reference_with_and_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..40 {
        let levels = if trial % 2 == 0 { 5 } else { 1000 };
        let (na, nb) = (rng.gen_range(3..60), rng.gen_range(3..60));
        let a: Vec<f64> = (0..na).map(|_| rng.gen_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.gen_range(0..levels) as f64 + 0.5 * (trial % 3) as f64).collect();
        let got = kruskal_wallis(&a, &b).unwrap();
        let (h, p) = ref_kw(&a, &b);
        close(got.h, h, "H");
        close(got.p, p, "p");
    }
}

#[test]
fn kruskal_wallis_worked_example() {
    let got = kruskal_wallis(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    // 12 / (6 * 7) * (6^2 / 3 + 15^2 / 3) - 3 * 7 = 27 / 7
    assert!((got.h - 3.857).abs() < 1e-3, "{}", got.h);
    assert!((got.h - 27.0 / 7.0).abs() < 1e-12);
    assert!((got.p - 0.0495).abs() < 1e-4, "{}", got.p);
}

#[test]
fn kruskal_wallis_separated_groups() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [6.0, 7.0, 8.0, 9.0, 10.0];
    let got = kruskal_wallis(&a, &b).unwrap();
    // 12 / (10 * 11) * (15^2 / 5 + 40^2 / 5) - 3 * 11
    assert!((got.h - 75.0 / 11.0).abs() < 1e-9, "{}", got.h);
    assert!((got.p - 0.00902).abs() < 1e-4, "{}", got.p);
    let same = kruskal_wallis(&[2.0; 4], &[2.0; 7]).unwrap();
    assert_eq!((same.h, same.p), (0.0, 1.0));
}

fn one_hot(u: usize, v: usize) -> Grid {
    let mut g = Grid::zeros(SIDE, SIDE);
    g.values[v * SIDE + u] = 1.0;
    g
}

#[test]
fn closed_form_examples() {
    let mut half = Grid::zeros(SIDE, SIDE);
    half.values[..SIDE * SIDE / 2].iter_mut().for_each(|x| *x = 1.0);
    let mut quarter = Grid::zeros(SIDE, SIDE);
    quarter.values[..SIDE * SIDE / 4].iter_mut().for_each(|x| *x = 1.0);
    assert_eq!(iou_at(&half, &half, 0.5).unwrap(), 1.0);
    assert_eq!(iou_at(&half, &quarter, 0.5).unwrap(), 0.5);
    assert_eq!(iou_at(&one_hot(0, 0), &one_hot(1, 0), 0.25).unwrap(), 0.0);
    assert_eq!(mode_distance(&one_hot(0, 0), &one_hot(3, 4)).unwrap(), 5.0);

    let mut pair = Grid::zeros(SIDE, SIDE);
    pair.values[0] = 1.0;
    pair.values[2] = 1.0;
    assert_eq!(centroid(&pair).unwrap(), (1.0, 0.0));

    let js = js_divergence(&one_hot(0, 0), &one_hot(5, 5)).unwrap();
    assert!((js - std::f64::consts::LN_2).abs() < 1e-6, "{js}");
    assert!(kl_divergence(&half, &half).unwrap().abs() < 1e-12);
    assert!(kl_divergence(&one_hot(0, 0), &one_hot(5, 5)).unwrap() > 20.0);
}

#[test]
fn spray_densification() {
    let single = spray_to_dense(&[(8, 8)], SIDE, SIDE, 3).unwrap();
    assert!((single.dense.total() - 1.0).abs() < 1e-12);
    assert_eq!(single.dense.argmax(), (8, 8));
    assert_eq!(centroid(&single.dense).unwrap(), (8.0, 8.0));
    let support = single.dense.values.iter().filter(|&&x| x > 0.0).count();
    // lattice points with dx^2 + dy^2 <= 9
    assert_eq!(support, 29);

    let two = spray_to_dense(&[(1, 1), (14, 14)], SIDE, SIDE, 2).unwrap();
    let (a, b) = (two.dense.values[SIDE + 1], two.dense.values[14 * SIDE + 14]);
    assert!((a - b).abs() < 1e-15 && a > 0.0);
    assert_eq!(two.dense.values[8 * SIDE + 8], 0.0);
    assert!(spray_to_dense(&[], SIDE, SIDE, 2).is_err());
    assert!(spray_to_dense(&[(SIDE, 0)], SIDE, SIDE, 2).is_err());
}

#[test]
fn prediction_equal_to_ground_truth_scores_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gt: [Option<_>; Relation::COUNT] = Default::default();
    let mut data = vec![0.0f32; Relation::COUNT * SIDE * SIDE];
    for r in Relation::ALL {
        let points: Vec<(usize, usize)> =
            (0..20).map(|_| (rng.gen_range(2..6) + 2 * r.index(), rng.gen_range(3..12))).collect();
        let truth = spray_to_dense(&points, SIDE, SIDE, 2).unwrap();
        let max = truth.dense.max();
        for (i, &x) in truth.dense.values.iter().enumerate() {
            data[r.index() * SIDE * SIDE + i] = (0.5 * x / max).max(f64::from(f32::MIN_POSITIVE)) as f32;
        }
        gt[r.index()] = Some(truth);
    }
    let maps = PlacementMaps::new(Tensor::new(&[Relation::COUNT, SIDE, SIDE], data).unwrap()).unwrap();
    let report = evaluate(&maps, &gt, None, 200, &mut rng).unwrap();
    assert_eq!(report.rows.len(), Relation::COUNT);
    assert!(report.skipped.is_empty());
    let m = &report.mean;
    assert!(m.iou.iter().all(|&x| (x - 1.0).abs() < 1e-12), "{:?}", m.iou);
    assert_eq!(m.mode_distance, 0.0);
    assert!(m.centroid_distance < 1e-3, "{}", m.centroid_distance);
    assert!(m.kl < 1e-6 && m.js < 1e-6, "{} {}", m.kl, m.js);
    assert!(m.kw_agreement_rate >= 0.8, "{}", m.kw_agreement_rate);
}

#[test]
fn oracle_maps_are_fully_consistent_and_uniform_maps_match_the_census() {
    let data = Dataset::generate(30, 17, &GenerationConfig::with_size(64, 64)).unwrap();
    let ids: Vec<u32> = data.scenes_in(Split::Train).iter().map(|e| e.scene_id).take(12).collect();
    let subjects = Catalog::default().subjects(64);
    let config = SelfConsistencyConfig { samples_per_case: 10, seed: 2, restrict_to_table: true };
    // A reference at the table edge can have a feasible relation with no
    // table pixel; its oracle map is flat and sampling degrades to uniform.
    let placeable: Vec<u32> = ids
        .iter()
        .copied()
        .filter(|&id| {
            let scene = data.scene(id);
            scene.objects.iter().filter(|o| o.is_on_floor()).all(|o| {
                feasible_relations(o)
                    .into_iter()
                    .all(|r| relation_region(scene, o.id, r, &scene.table_region).unwrap().into_iter().any(|x| x))
            })
        })
        .collect();
    assert!(placeable.len() >= 8, "{}", placeable.len());
    let oracle = self_consistency(&OracleMaps, &data, &placeable, &subjects, &config).unwrap();
    assert_eq!(oracle.mean_rate(), 1.0);

    let config = SelfConsistencyConfig { samples_per_case: 400, ..config };
    let uniform = self_consistency(&UniformMaps, &data, &ids, &subjects, &config).unwrap();
    let census = uniform_baseline(&data, &ids).unwrap();
    for r in Relation::ALL {
        let (Some(rate), Some(expected)) = (uniform.rate(r), census[r.index()]) else {
            continue;
        };
        let n = uniform.trials[r.index()] as f64;
        let sd = (expected * (1.0 - expected) / n).sqrt();
        assert!((rate - expected).abs() < 4.0 * sd + 1e-3, "{r}: {rate} vs census {expected} (n = {n})");
    }
}

fn grid_from(values: &[f64]) -> Grid {
    Grid::new(SIDE, SIDE, values.to_vec()).unwrap()
}

/// Places `g` into a larger canvas at offset (dx, dy).
fn shifted(g: &Grid, dx: usize, dy: usize, side: usize) -> Grid {
    let mut out = Grid::zeros(side, side);
    for v in 0..g.height {
        for u in 0..g.width {
            out.values[(v + dy) * side + u + dx] = g.values[v * g.width + u];
        }
    }
    out
}

fn map_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], SIDE * SIDE)
        .prop_filter("needs mass", |v| v.iter().any(|&x| x > 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pixel_permutation_leaves_set_metrics_unchanged(a in map_values(), b in map_values(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..SIDE * SIDE).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permute = |v: &[f64]| grid_from(&order.iter().map(|&i| v[i]).collect::<Vec<_>>());
        let (p, q) = (grid_from(&a), grid_from(&b));
        let (pp, qp) = (permute(&a), permute(&b));
        for t in [0.25, 0.5, 0.75] {
            prop_assert_eq!(iou_at(&p, &q, t).unwrap(), iou_at(&pp, &qp, t).unwrap());
        }
        prop_assert!((kl_divergence(&p, &q).unwrap() - kl_divergence(&pp, &qp).unwrap()).abs() < 1e-9);
        prop_assert!((js_divergence(&p, &q).unwrap() - js_divergence(&pp, &qp).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn translation_leaves_distances_unchanged(a in map_values(), b in map_values(), dx in 0usize..8, dy in 0usize..8) {
        let (p, q) = (grid_from(&a), grid_from(&b));
        let (ps, qs) = (shifted(&p, dx, dy, SIDE + 8), shifted(&q, dx, dy, SIDE + 8));
        prop_assert_eq!(mode_distance(&p, &q).unwrap(), mode_distance(&ps, &qs).unwrap());
        prop_assert!((centroid_distance(&p, &q).unwrap() - centroid_distance(&ps, &qs).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn divergence_bounds_and_scale_invariance(a in map_values(), b in map_values(), c in 0.01f64..100.0) {
        let (p, q) = (grid_from(&a), grid_from(&b));
        let js = js_divergence(&p, &q).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&js));
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        let scaled = grid_from(&a.iter().map(|x| x * c).collect::<Vec<_>>());
        for t in [0.25, 0.5, 0.75] {
            prop_assert_eq!(iou_at(&p, &scaled, t).unwrap(), 1.0);
        }
        prop_assert!(kl_divergence(&p, &scaled).unwrap() < 1e-12);
    }
}
