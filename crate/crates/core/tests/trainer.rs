mod common;

use pathprompt::augment::Strategy;
use pathprompt::checkpoint::Checkpoint;
use pathprompt::model::Projection;
use pathprompt::pipeline::mean_loss;
use pathprompt::trainer::{adam_update, fine_tune, sample_loss, TrainConfig};
use pathprompt::Trainable;

/// Adam written out from its textbook definition, for a single scalar.
fn reference_adam(x0: f64, grad: impl Fn(f64) -> f64, steps: usize, lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(x);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        x -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(x);
    }
    out
}

#[test]
fn adam_on_a_parabola() {
    let reference = reference_adam(1.0, |x| 2.0 * x, 10, 0.1);
    let (mut x, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
    let mut prev = 1.0f64;
    for (t, want) in reference.iter().enumerate() {
        let g = [2.0 * x[0]];
        adam_update(&mut x, &g, &mut m, &mut v, t as i32 + 1, 0.1, 0.9, 0.999, 1e-8);
        if t == 0 {
            // Bias correction makes the first step lr in the gradient's sign direction.
            assert!((x[0] - 0.9).abs() < 1e-8);
        }
        assert!(x[0].abs() < prev.abs(), "step {t}: |x| did not decrease");
        assert!((x[0] - want).abs() < 1e-12);
        prev = x[0];
    }
}

#[test]
fn adam_ignores_zero_gradient() {
    let mut p = [0.5f64, -2.0, 3.25];
    let before = p;
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    for t in 1..=5 {
        adam_update(&mut p, &[0.0; 3], &mut m, &mut v, t, 0.1, 0.9, 0.999, 1e-8);
    }
    assert_eq!(p, before);
}

#[test]
fn loss_halves_within_200_steps_on_50_samples() {
    let mut cfg = common::tiny_config();
    cfg.model.d_model = 32;
    cfg.model.lora_rank = 8;
    cfg.model.lora_targets = vec![Projection::Query, Projection::Key, Projection::Value, Projection::Output];
    let data = common::prepared(&cfg);
    let samples = &data.train[..50];
    let tc = TrainConfig { learning_rate: 3e-2, epochs: 40, batch_size: 10, ..TrainConfig::default() };
    let mut trainable = Trainable::init(&data.model, Strategy::None, tc.lambda, tc.seed).unwrap();
    let before = mean_loss(&data.model, &trainable, samples).unwrap();
    let log = fine_tune(&data.model, &mut trainable, samples, &tc, |_, _| Ok(())).unwrap();
    let after = mean_loss(&data.model, &trainable, samples).unwrap();
    assert_eq!(log.len(), 40);
    assert!(after <= 0.5 * before, "loss {before} -> {after}");
}

#[test]
fn base_weights_are_untouched_by_training() {
    let mut cfg = common::tiny_config();
    cfg.train.strategy = Strategy::Hybrid;
    let data = common::prepared(&cfg);
    let base = data.model.weights().clone();
    let mut trainable = Trainable::init(&data.model, Strategy::Hybrid, 0.25, 0).unwrap();
    let samples: Vec<_> = data.train[..16].to_vec();
    fine_tune(&data.model, &mut trainable, &samples, &cfg.train, |_, _| Ok(())).unwrap();
    assert!(data.model.weights() == &base);
    assert!(!trainable.adapters.all_b_zero());
}

#[test]
fn training_is_seed_deterministic() {
    let cfg = common::tiny_config();
    let data = common::prepared(&cfg);
    let samples = &data.train[..16];
    let run = |seed: u64| {
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let mut t = Trainable::init(&data.model, Strategy::None, tc.lambda, seed).unwrap();
        let log = fine_tune(&data.model, &mut t, samples, &tc, |_, _| Ok(())).unwrap();
        (t, log[0].mean_loss)
    };
    let (a, la) = run(3);
    let (b, lb) = run(3);
    let (c, _) = run(4);
    assert!(a == b);
    assert_eq!(la.to_bits(), lb.to_bits());
    assert!(a != c);
}

#[test]
fn selector_flag_changes_the_loss() {
    let mut cfg = common::tiny_config();
    cfg.paths.max_paths = 2;
    let data = common::prepared(&cfg);
    let trainable = Trainable::init(&data.model, Strategy::SoftSelector, 0.25, 0).unwrap();
    let mut s = data.train.iter().find(|s| s.paths.len() == 2).expect("a sample with two paths").clone();
    s.use_selector = false;
    let off = sample_loss(&data.model, &trainable, &s).unwrap();
    s.use_selector = true;
    let on = sample_loss(&data.model, &trainable, &s).unwrap();
    assert!((on - off).abs() > 1e-9, "{on} vs {off}");
}

#[test]
fn checkpoint_reload_reproduces_loss() {
    let mut cfg = common::tiny_config();
    cfg.train.strategy = Strategy::SoftSelector;
    let data = common::prepared(&cfg);
    let samples: Vec<_> = data.train[..12].iter().cloned().map(|mut s| {
        s.use_selector = true;
        s
    }).collect();
    let mut trainable = Trainable::init(&data.model, Strategy::SoftSelector, 0.25, 0).unwrap();
    fine_tune(&data.model, &mut trainable, &samples, &cfg.train, |_, _| Ok(())).unwrap();
    let want = mean_loss(&data.model, &trainable, &samples).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(&data.model, &cfg.train, &trainable, &data.tok).save(&path).unwrap();
    let (model, reloaded, tok) = Checkpoint::<f64>::load(&path).unwrap().into_parts();
    assert_eq!(tok, data.tok);
    assert!(reloaded == trainable);
    let got = mean_loss(&model, &reloaded, &samples).unwrap();
    assert!((got - want).abs() < 1e-12);
}
