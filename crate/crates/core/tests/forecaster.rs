mod support;

use bubblefl::forecaster::{
    forward, init_weights, predict, train_epochs, ForecasterConfig, Layout, Mode, ModelWeights,
    SequenceData,
};
use bubblefl::seed;
use ndarray::Array3;
use proptest::prelude::*;
use rand::Rng;

fn check(cfg: &ForecasterConfig, input_dim: usize, batch: usize, data_seed: u64) -> (f64, f64) {
    let w = init_weights(cfg, input_dim).unwrap();
    let mut rng = seed::rng(data_seed);
    let (x, y) = support::random_batch(&mut rng, batch, cfg.sequence_length, input_dim);
    let analytic = bubblefl::forecaster::gradient(&w, x.view(), &y).unwrap();
    let numeric = support::numeric_gradient(&w, &x, &y, 1e-5);
    (
        support::relative_error(&analytic, &numeric),
        support::worst_coordinate_error(&analytic, &numeric, 1e-6),
    )
}

#[test]
fn gradient_check_dim8_one_layer_two_tokens() {
    let (rel, worst) = check(&support::small_config(1, 2, 8, 2), 3, 4, 1);
    assert!(rel < 1e-4, "relative error {rel}");
    assert!(worst < 1e-3, "worst coordinate {worst}");
}

#[test]
fn gradient_check_deeper_and_longer() {
    for (layers, heads, dim, t) in [(2, 2, 8, 3), (1, 1, 4, 1), (2, 4, 8, 4), (0, 1, 4, 2)] {
        let (rel, _) = check(&support::small_config(layers, heads, dim, t), 3, 3, 7);
        assert!(rel < 1e-4, "({layers},{heads},{dim},{t}): {rel}");
    }
}

#[test]
fn gradient_check_after_training_steps() {
    // away from initialization, layer norms and ReLUs see less symmetric inputs
    let cfg = support::small_config(1, 2, 8, 2);
    let mut rng = seed::rng(9);
    let (x, y) = support::random_batch(&mut rng, 16, 2, 3);
    let data = SequenceData::new(x.clone(), y.clone()).unwrap();
    let w = init_weights(&cfg, 3).unwrap();
    let trained = train_epochs(&w, &data, &cfg, 20, 1).unwrap().weights;
    let analytic = bubblefl::forecaster::gradient(&trained, x.view(), &y).unwrap();
    let numeric = support::numeric_gradient(&trained, &x, &y, 1e-5);
    assert!(support::relative_error(&analytic, &numeric) < 1e-4);
}

#[test]
fn dropout_off_train_equals_eval() {
    let cfg = support::small_config(2, 2, 8, 3);
    let w = init_weights(&cfg, 4).unwrap();
    let mut rng = seed::rng(3);
    let (x, _) = support::random_batch(&mut rng, 5, 3, 4);
    let (train, _) = forward(&w, x.view(), &cfg, Mode::Train, &mut seed::rng(1)).unwrap();
    let (eval, trace) = forward(&w, x.view(), &cfg, Mode::Eval, &mut seed::rng(2)).unwrap();
    assert_eq!(train, eval);
    assert_eq!(trace.layers.len(), 2);
    for layer in &trace.layers {
        for sample in layer {
            assert_eq!(sample.len(), 2);
            for alpha in sample {
                for row in alpha.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|a| *a >= 0.0));
                }
            }
        }
    }
}

#[test]
fn dropout_changes_training_pass_only() {
    let cfg = ForecasterConfig { dropout_rate: 0.5, ..support::small_config(1, 2, 8, 2) };
    let w = init_weights(&cfg, 4).unwrap();
    let mut rng = seed::rng(3);
    let (x, _) = support::random_batch(&mut rng, 5, 2, 4);
    let (a, _) = forward(&w, x.view(), &cfg, Mode::Train, &mut seed::rng(1)).unwrap();
    let (b, _) = forward(&w, x.view(), &cfg, Mode::Eval, &mut seed::rng(1)).unwrap();
    assert_ne!(a, b);
    assert_eq!(b, predict(&w, x.view()).unwrap());
}

#[test]
fn only_head_bias_gives_constant_output() {
    let cfg = support::small_config(2, 2, 8, 3);
    let layout = Layout::new(&cfg, 4);
    let mut w = ModelWeights::zeros(layout.clone());
    let mut off = 0;
    for e in &layout.entries {
        if e.name == "head.bias" {
            w.values[off] = 2.5;
        }
        off += e.len();
    }
    let mut rng = seed::rng(4);
    let (x, _) = support::random_batch(&mut rng, 6, 3, 4);
    assert!(predict(&w, x.view()).unwrap().iter().all(|p| *p == 2.5));
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let cfg = ForecasterConfig { learning_rate: 0.0, ..support::small_config(1, 2, 8, 1) };
    let w = init_weights(&cfg, 3).unwrap();
    let mut rng = seed::rng(5);
    let (x, y) = support::random_batch(&mut rng, 20, 1, 3);
    let out = train_epochs(&w, &SequenceData::new(x, y).unwrap(), &cfg, 3, 0).unwrap();
    assert_eq!(out.weights, w);
    assert_eq!(out.losses.len(), 3);
}

#[test]
fn training_fits_a_linear_target() {
    let cfg = ForecasterConfig {
        learning_rate: 0.01,
        batch_size: 32,
        ..support::small_config(1, 2, 16, 1)
    };
    let mut rng = seed::rng(6);
    let n = 256;
    let x = Array3::from_shape_fn((n, 1, 4), |_| rng.gen_range(-1.0..1.0));
    let y: Vec<f64> = (0..n).map(|i| 1.5 * x[[i, 0, 0]] - 0.8 * x[[i, 0, 2]] + 0.3).collect();
    let data = SequenceData::new(x, y).unwrap();
    let w = init_weights(&cfg, 4).unwrap();
    let out = train_epochs(&w, &data, &cfg, 60, 1).unwrap();
    let final_loss = {
        let p = predict(&out.weights, data.x.view()).unwrap();
        p.iter().zip(&data.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64
    };
    assert!(final_loss < 0.1 * out.initial_loss, "{final_loss} vs {}", out.initial_loss);
}

#[test]
fn training_is_deterministic() {
    let cfg = ForecasterConfig { dropout_rate: 0.3, ..support::small_config(1, 2, 8, 2) };
    let mut rng = seed::rng(8);
    let (x, y) = support::random_batch(&mut rng, 40, 2, 3);
    let data = SequenceData::new(x, y).unwrap();
    let w = init_weights(&cfg, 3).unwrap();
    let a = train_epochs(&w, &data, &cfg, 5, 11).unwrap();
    let b = train_epochs(&w, &data, &cfg, 5, 11).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.losses, b.losses);
    let c = train_epochs(&w, &data, &cfg, 5, 12).unwrap();
    assert_ne!(a.weights, c.weights);
}

#[test]
fn diverging_training_reports_last_finite_weights() {
    let cfg = ForecasterConfig { learning_rate: 1e300, ..support::small_config(1, 1, 4, 1) };
    let mut rng = seed::rng(10);
    let (x, y) = support::random_batch(&mut rng, 8, 1, 2);
    let y: Vec<f64> = y.iter().map(|v| v * 1e200).collect();
    let w = init_weights(&cfg, 2).unwrap();
    match train_epochs(&w, &SequenceData::new(x, y).unwrap(), &cfg, 50, 0) {
        Err(bubblefl::Error::Diverged { last_finite, .. }) => {
            assert_eq!(last_finite.len(), w.len());
            assert!(last_finite.iter().all(|v| v.is_finite()));
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.losses)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_round_trips(
        layers in 0usize..3,
        heads in 1usize..3,
        per_head in 1usize..4,
        input_dim in 1usize..5,
        seed_value in any::<u64>(),
    ) {
        let cfg = ForecasterConfig { seed: seed_value, ..support::small_config(layers, heads, heads * per_head, 1) };
        let w = init_weights(&cfg, input_dim).unwrap();
        let tensors = w.unflatten();
        let back = ModelWeights::flatten(w.layout.clone(), &tensors).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn shared_seed_gives_identical_init(seed_value in any::<u64>()) {
        let cfg = ForecasterConfig { seed: seed_value, ..support::small_config(1, 2, 8, 1) };
        prop_assert_eq!(init_weights(&cfg, 3).unwrap(), init_weights(&cfg, 3).unwrap());
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = support::small_config(1, 2, 8, 1);
    let w = init_weights(&cfg, 3).unwrap();
    let (bin, layout) = (dir.path().join("w.bin"), dir.path().join("w.json"));
    w.save(&bin, &layout).unwrap();
    assert_eq!(ModelWeights::load(&bin, &layout).unwrap(), w);
}
