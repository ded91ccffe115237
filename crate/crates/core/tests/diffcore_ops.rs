mod common;

use common::grad::{
    generic_point, op_checks, random, relnet_check, sample_batch, small_relnet_config, spatial_checks, RelNetLoss,
    SpatialLoss,
};
use relplace_core::diffcore::{grad_check, Tape, Tensor};
use relplace_core::relnet::RelNet;
use relplace_core::spatial::{SpatialConfig, SpatialModel, Spread};
use relplace_core::Error;

#[test]
fn every_op_passes_gradient_check_in_both_precisions() {
    for c in op_checks() {
        assert!(c.passes(), "{}: f32 {:?} f64 {:?}", c.name, c.f32, c.f64);
        assert_eq!(c.f32.components, c.components);
    }
}

#[test]
fn relnet_classification_loss_passes_gradient_check() {
    let c = relnet_check();
    assert!(c.passes(), "f32 {:?} f64 {:?}", c.f32, c.f64);
}

#[test]
fn spatial_loss_through_the_network_passes_gradient_check() {
    for c in spatial_checks() {
        assert!(c.passes(), "{}: f32 {:?} f64 {:?}", c.name, c.f32, c.f64);
    }
}

#[test]
fn network_gradients_agree_at_other_points_with_a_finer_step() {
    let config = small_relnet_config();
    let spatial = SpatialConfig { widths: [2, 2, 3], context_width: 2, output_width: 2, ..SpatialConfig::default() };
    for seed in 10..14 {
        let point = generic_point(RelNet::<f64>::new(config.clone(), seed).unwrap().params, 0.5, seed);
        let objective = RelNetLoss { config: config.clone(), input: random(&[2, 5, 12, 12], seed), labels: vec![0, 3] };
        let r = grad_check::<f64, _>(&objective, &point, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-3, "relnet seed {seed}: {r:?}");

        let point = generic_point(SpatialModel::<f64>::new(spatial.clone(), seed).unwrap().params, 0.5, seed);
        let objective = SpatialLoss {
            config: spatial.clone(),
            input: random(&[1, 4, 32, 32], seed),
            batch: sample_batch(6, 32, 32, seed),
            spread: Spread::Sobel,
        };
        let r = grad_check::<f64, _>(&objective, &point, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-3, "spatial seed {seed}: {r:?}");
    }
}

fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, f, ho, wo]);
    for s in 0..n {
        for o in 0..f {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for ch in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let (r, q) = (
                                    (i * stride + di) as isize - pad as isize,
                                    (j * stride + dj) as isize - pad as isize,
                                );
                                if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                    acc += x.at(&[s, ch, r as usize, q as usize]) * k.at(&[o, ch, di, dj]);
                                }
                            }
                        }
                    }
                    out.set(&[s, o, i, j], acc);
                }
            }
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn conv_matches_direct_loops() {
    for (stride, pad, seed) in [(1, 0, 1), (1, 1, 2), (2, 1, 3), (2, 0, 4), (3, 2, 5)] {
        let x = random(&[2, 3, 7, 9], seed);
        let k = random(&[4, 3, 3, 3], seed + 10);
        let b = random(&[4], seed + 20);
        let mut tape = Tape::<f64>::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, kv, bv, stride, pad).unwrap();
        let expected = naive_conv(&x, &k, b.data(), stride, pad);
        assert_eq!(tape.value(y).shape(), expected.shape());
        assert_close(tape.value(y).data(), expected.data(), 1e-12);
    }
}

#[test]
fn conv_trivial_cases() {
    let x = random(&[1, 1, 3, 3], 9);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let k = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(xv, k, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), x.data());

    let ones = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(ones, k, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[9.0]);
}

#[test]
fn conv_channel_mismatch_names_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[1]));
    match tape.conv2d(x, k, b, 1, 0) {
        Err(Error::Dimension { axis, expected, actual, .. }) => assert_eq!((axis, expected, actual), ("C", 3, 2)),
        other => panic!("expected a dimension error, got {other:?}"),
    }
}

#[test]
fn pooling_examples_and_tie_break() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.pool_max(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let c = tape.variable(Tensor::full(&[1, 1, 4, 4], 7.0));
    let y = tape.pool_max(c, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[7.0; 4]);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    let gc = g.get(c).unwrap();
    let firsts = [0, 2, 8, 10];
    for (i, &v) in gc.iter().enumerate() {
        assert_eq!(v, if firsts.contains(&i) { 1.0 } else { 0.0 }, "cell {i}");
    }

    let small = tape.variable(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(matches!(tape.pool_max(small, 3, 1), Err(Error::Dimension { .. })));
}

#[test]
fn upsample_replicates_and_adjoint_sums() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap());
    let y = tape.upsample2x(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0; 4]);

    let x = tape.variable(random(&[1, 2, 2, 3], 3));
    let y = tape.upsample2x(x).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 4.0));
    let xs = tape.value(x).clone();
    for c in 0..2 {
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(tape.value(y).at(&[0, c, i, j]), xs.at(&[0, c, i / 2, j / 2]));
            }
        }
    }
}

fn softmax_of(logits: &[f64]) -> Vec<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[1, logits.len()], logits.to_vec()).unwrap());
    let p = tape.softmax(x).unwrap();
    tape.value(p).data().to_vec()
}

#[test]
fn softmax_closed_forms_and_stability() {
    for c in [-3.0, 0.0, 41.5] {
        assert_close(&softmax_of(&[c; 6]), &[1.0 / 6.0; 6], 1e-15);
    }
    assert_close(&softmax_of(&[2f64.ln(), 0.0]), &[2.0 / 3.0, 1.0 / 3.0], 1e-15);
    let p = softmax_of(&[1000.0, 0.0]);
    assert!(p.iter().all(|v| v.is_finite()));
    // exp(-1000) underflows in f64; the extended-precision value is 1 - 5e-435.
    assert_eq!(p[0], 1.0);
    assert!(p[1] >= 0.0 && p[1] < 1e-300);

    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![1000.0f32, 0.0]).unwrap());
    let p = tape.softmax(x).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 0.0]);
}

#[test]
fn cross_entropy_closed_forms() {
    let mut tape = Tape::<f64>::new();
    let onehot = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let exact = tape.constant(Tensor::new(&[1, 6], onehot.to_vec()).unwrap());
    let l = tape.cross_entropy(exact, &onehot).unwrap();
    assert!(tape.value(l).item().abs() < 1e-11);

    for label in 0..6 {
        let mut y = [0.0; 6];
        y[label] = 1.0;
        let uniform = tape.constant(Tensor::full(&[1, 6], 1.0 / 6.0));
        let l = tape.cross_entropy(uniform, &y).unwrap();
        assert!((tape.value(l).item() - 6f64.ln()).abs() < 1e-10);
    }
}

#[test]
fn mse_examples() {
    let mut tape = Tape::<f64>::new();
    let t = random(&[3, 4], 2);
    let x = tape.constant(t.clone());
    let l = tape.mse(x, &t).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);

    let x = tape.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
    let l = tape.mse(x, &Tensor::new(&[2], vec![0.0, 1.0]).unwrap()).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
}

#[test]
fn non_finite_forward_value_is_reported() {
    let mut tape = Tape::<f32>::new();
    let x = tape.variable(Tensor::new(&[2], vec![f32::MAX, f32::MAX]).unwrap());
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y);
    assert!(matches!(tape.backward(s), Err(Error::NonFinite(_))));
}
