#![allow(clippy::needless_range_loop)]

use neurodob::neurodob::{CompensationLimits, FeatureVector, NeuroDob, N_FEATURES};
use neurodob::nn::{Adam, BnStats, Checkpoint, MlpModel, PassConfig, Standardizer};
use neurodob::rng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rng: &mut ChaCha8Rng, n: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n * width).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (x, y)
}

/// Random model with non-trivial batch-norm affine parameters and running
/// statistics, so every parameter influences the output.
fn rich_model(dims: &[usize], seed: u64) -> MlpModel {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MlpModel::new(dims, 0.0, &mut r).unwrap();
    for bn in &mut m.bn {
        for v in bn.scale.iter_mut() {
            *v = r.random_range(0.5..1.5);
        }
        for v in bn.shift.iter_mut() {
            *v = r.random_range(-0.3..0.3);
        }
        for v in bn.running_mean.iter_mut() {
            *v = r.random_range(-0.5..0.5);
        }
        for v in bn.running_var.iter_mut() {
            *v = r.random_range(0.5..2.0);
        }
    }
    m
}

fn gradient_check(pass: PassConfig) {
    let mut model = rich_model(&[2, 4, 4, 1], 1);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (x, y) = batch(&mut r, 16, 2);
    let (_, grads) = model.loss_and_gradients(&x, &y, pass, None).unwrap();
    let h = 1e-6;
    let blocks = model.param_blocks().len();
    for b in 0..blocks {
        for i in 0..grads[b].len() {
            let orig = model.param_blocks()[b][i];
            model.param_blocks_mut()[b][i] = orig + h;
            let (up, _) = model.loss_and_gradients(&x, &y, pass, None).unwrap();
            model.param_blocks_mut()[b][i] = orig - h;
            let (down, _) = model.loss_and_gradients(&x, &y, pass, None).unwrap();
            model.param_blocks_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[b][i];
            // Batch statistics cancel first-layer biases exactly; the
            // difference quotient then only sees roundoff.
            let tol = 1e-4 * analytic.abs().max(numeric.abs()) + 1e-8;
            assert!((analytic - numeric).abs() <= tol, "block {b} index {i}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn backprop_matches_finite_differences_with_frozen_statistics() {
    gradient_check(PassConfig::FROZEN);
}

#[test]
fn backprop_matches_finite_differences_with_batch_statistics() {
    gradient_check(PassConfig {
        bn: BnStats::Batch,
        dropout: false,
    });
}

#[test]
fn batch_norm_standardizes_each_unit() {
    let model = rich_model(&[3, 8, 8, 1], 4);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let (x, _) = batch(&mut r, 256, 3);
    for layer in model.normalized_activations(&x, 256).unwrap() {
        let width = layer.len() / 256;
        for j in 0..width {
            let col: Vec<f64> = (0..256).map(|i| layer[i * width + j]).collect();
            let mean = col.iter().sum::<f64>() / 256.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0;
            assert!(mean.abs() < 1e-12);
            // Population variance is var_b / (var_b + eps), just under one.
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }
}

#[test]
fn dropout_preserves_expected_output() {
    // One hidden layer: the output is linear in the mask, so inverted
    // dropout is exactly unbiased.
    let mut model = rich_model(&[3, 16, 1], 6);
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let (x, _) = batch(&mut r, 32, 3);
    let mut plain = model.clone();
    plain.dropout_p = 0.0;
    let reference = plain.forward_train_batch(&x, 32, &mut r).unwrap();
    model.dropout_p = 0.3;
    let draws = 20_000;
    let mut mean = vec![0.0; 32];
    for _ in 0..draws {
        for (m, o) in mean.iter_mut().zip(model.forward_train_batch(&x, 32, &mut r).unwrap()) {
            *m += o / draws as f64;
        }
    }
    let spread = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (m, e) in mean.iter().zip(&reference) {
        assert!((m - e).abs() < 0.03 * spread.max(1.0), "{m} vs {e}");
    }
}

#[test]
fn weight_decay_shrinks_only_weights() {
    let mut model = rich_model(&[2, 4, 1], 8);
    let before = model.clone();
    let zero: Vec<Vec<f64>> = model.param_blocks().iter().map(|b| vec![0.0; b.len()]).collect();
    let mut opt = Adam::new(&model, 1e-3, 1e-2);
    opt.step(&mut model, zero.clone());
    assert!(model.weight_norm_sq() < before.weight_norm_sq());
    assert_eq!(model.biases, before.biases);
    assert_eq!(model.bn, before.bn);

    let mut still = before.clone();
    Adam::new(&still, 1e-3, 0.0).step(&mut still, zero);
    assert_eq!(still, before);
}

#[test]
fn checkpoint_round_trip_gives_identical_compensation() {
    let model = rich_model(&[N_FEATURES, 16, 16, 1], 9);
    let mut r = rng::stream(9, "test.features");
    let rows: Vec<f64> = (0..N_FEATURES * 200).map(|_| r.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..200).map(|_| r.random_range(-0.05..0.05)).collect();
    let st = Standardizer::fit(&rows, N_FEATURES, &targets).unwrap();
    let limits = CompensationLimits::new(0.1).unwrap();
    let nd = NeuroDob::new(model, st, limits);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.txt");
    nd.save(&path).unwrap();
    let back = NeuroDob::load(&path, limits).unwrap();
    // Dropout is a training-time setting and is not part of the checkpoint.
    assert_eq!(back.checkpoint.to_text(), nd.checkpoint.to_text());
    assert_eq!(Checkpoint::from_text(&nd.checkpoint.to_text()).unwrap().to_text(), nd.checkpoint.to_text());
    for _ in 0..1000 {
        let f: [f64; N_FEATURES] = std::array::from_fn(|_| r.random_range(-0.5..0.5));
        let f = FeatureVector::from_array(f);
        assert_eq!(back.compensate(&f).to_bits(), nd.compensate(&f).to_bits());
    }
}
