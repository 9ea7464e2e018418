use threer::config::KvFile;
use threer::image::{CorpusSpec, TrainingPair};
use threer::network::{NetworkConfig, NetworkParams, HIGH_CHANNELS};
use threer::objectives::total_loss_var;
use threer::tensor::{backward, Tensor};
use threer::training::{
    adam_step, batch_losses, clip_global_norm, gaussian_tensor, gradient_check, sample_batch,
    train_stage1, train_stage2, write_history_csv, AdamHyper, AdamState, GradcheckOptions,
    TrainingConfig, TrainingError, HISTORY_HEADER,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn adam_ignores_zero_gradients() {
    let mut params = vec![Tensor::from_fn(&[3], |i| i as f32 - 1.0)];
    let before = params.clone();
    let mut state = AdamState::new(&[&params[0]]);
    let grads = vec![Some(Tensor::zeros(&[3]))];
    for _ in 0..3 {
        adam_step(&mut params, &grads, &mut state, 0.1, &AdamHyper::default()).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(state.step, 3);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let g = [0.5f64, -2.0, 1e-3];
    let mut params = vec![Tensor::zeros(&[3])];
    let mut state = AdamState::new(&[&params[0]]);
    let grads = vec![Some(Tensor::from_fn(&[3], |i| g[i]))];
    adam_step(&mut params, &grads, &mut state, 0.01, &AdamHyper::default()).unwrap();
    for (p, gi) in params[0].data().iter().zip(g) {
        assert!((p + 0.01 * gi.signum()).abs() < 1e-7, "{p}");
    }
}

#[test]
fn adam_second_step_by_hand() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
    let (g1, g2) = (1.0, -3.0);
    let mut params = vec![Tensor::scalar(0.0f64)];
    let mut state = AdamState::new(&[&params[0]]);
    let hyper = AdamHyper {
        beta1: b1,
        beta2: b2,
        eps,
    };
    adam_step(
        &mut params,
        &[Some(Tensor::scalar(g1))],
        &mut state,
        lr,
        &hyper,
    )
    .unwrap();
    adam_step(
        &mut params,
        &[Some(Tensor::scalar(g2))],
        &mut state,
        lr,
        &hyper,
    )
    .unwrap();
    // m2 = 0.09 - 0.3, v2 = 0.000999 + 0.009
    let m_hat = (0.1 * 0.9 + 0.1 * g2) / (1.0 - 0.81);
    let v_hat = (0.001 * 0.999 + 0.001 * 9.0) / (1.0 - 0.999f64 * 0.999);
    let expected = -lr / (1.0 + eps) - lr * m_hat / (v_hat.sqrt() + eps);
    assert!((params[0].data()[0] - expected).abs() < 1e-12);
}

#[test]
fn adam_reports_missing_gradient() {
    let mut params = vec![Tensor::<f32>::zeros(&[1]), Tensor::zeros(&[2])];
    let mut state = AdamState::new(&[&params[0], &params[1]]);
    let grads = vec![Some(Tensor::zeros(&[1])), None];
    assert_eq!(
        adam_step(&mut params, &grads, &mut state, 0.1, &AdamHyper::default()),
        Err(1)
    );
}

#[test]
fn learning_rate_halves_at_milestones() {
    let cfg = TrainingConfig {
        stage1_iters: 100,
        lr: 1e-3,
        ..Default::default()
    };
    assert_eq!(cfg.milestones(), vec![20, 40, 60, 80]);
    assert_eq!(cfg.lr_at(19), 1e-3);
    assert_eq!(cfg.lr_at(20), 5e-4);
    assert_eq!(cfg.lr_at(99), 1e-3 / 16.0);
    let full = TrainingConfig::full_scale();
    assert_eq!(full.lr_at(99_999), 2e-4);
    assert_eq!(full.lr_at(100_000), 1e-4);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = TrainingConfig {
        lr_milestones: vec![10, 20],
        stage1_iters: 30,
        seed: 42,
        ..Default::default()
    };
    let back = TrainingConfig::from_kv(KvFile::parse(&cfg.to_kv_string()).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let default = TrainingConfig::default();
    let back = TrainingConfig::from_kv(KvFile::parse(&default.to_kv_string()).unwrap()).unwrap();
    assert_eq!(back, default);

    let err = TrainingConfig::from_kv(KvFile::parse("lr = 1e-3\nlearning_rate = 2\n").unwrap())
        .unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let err = TrainingConfig::from_kv(KvFile::parse("crop = 15\n").unwrap()).unwrap_err();
    assert!(err.to_string().contains("crop"), "{err}");
}

#[test]
fn global_norm_clipping() {
    let mut g = vec![
        Tensor::from_fn(&[2], |i| [3.0f32, 0.0][i]),
        Tensor::scalar(4.0f32),
    ];
    let norm = clip_global_norm(&mut g, 1.0);
    assert!((norm - 5.0).abs() < 1e-12);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-6);
    assert!((g[1].data()[0] - 0.8).abs() < 1e-6);
    let mut small = vec![Tensor::scalar(0.5f32)];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data()[0], 0.5);
}

fn toy_data(n: usize, size: usize) -> Vec<TrainingPair> {
    CorpusSpec {
        count: n,
        width: size,
        height: size,
        grain_levels: vec![1, 2, 3],
        ar_coefficients: None,
        test_every: 0,
        seed: 8,
    }
    .pairs()
    .unwrap()
    .into_iter()
    .map(|(p, _)| p)
    .collect()
}

fn toy_config(iters: usize) -> TrainingConfig {
    TrainingConfig {
        batch_size: 2,
        crop: 24,
        stage1_iters: iters,
        stage2_iters: iters,
        lr: 1e-3,
        seed: 3,
        network: NetworkConfig {
            blocks: 2,
            hidden: 4,
            layers: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn csv(history: &[threer::training::LossRecord]) -> String {
    let mut out = Vec::new();
    write_history_csv(&mut out, history).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn short_training_is_deterministic() {
    let data = toy_data(4, 32);
    let cfg = toy_config(6);
    let init = NetworkParams::new(cfg.network.clone(), cfg.seed);
    let a = train_stage1(init.clone(), &data, &cfg).unwrap();
    let b = train_stage1(init.clone(), &data, &cfg).unwrap();
    assert_eq!(a.params.weights, b.params.weights);
    assert_eq!(csv(&a.history), csv(&b.history));
    assert_ne!(a.params.weights, init.weights);

    assert_eq!(a.history.len(), 6);
    assert!(a.history.iter().all(|r| r.total.is_finite()));
    assert_eq!(a.history[0].parts.pow, 0.0);
    let lrs: Vec<f64> = a.history.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, (0..6).map(|i| cfg.lr_at(i)).collect::<Vec<_>>());
    let text = csv(&a.history);
    assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER);
    assert_eq!(text.lines().count(), 7);

    let other = TrainingConfig { seed: 4, ..cfg };
    let c = train_stage1(init, &data, &other).unwrap();
    assert_ne!(csv(&a.history), csv(&c.history));
}

#[test]
fn fine_tuning_records_its_rate() {
    let data = toy_data(2, 32);
    let mut cfg = toy_config(3);
    cfg.weights.r = 0.3;
    let init = NetworkParams::random(cfg.network.clone(), 1);
    let out = train_stage2(init, &data, &cfg).unwrap();
    assert_eq!(out.params.r_target, 0.3);
    assert!(out.history.iter().all(|r| r.lr == cfg.lr));
    assert!(out
        .history
        .iter()
        .all(|r| r.parts.pow > 0.0 && r.parts.ssim > 0.0));
}

#[test]
fn empty_dataset_is_an_error() {
    let cfg = toy_config(1);
    let init = NetworkParams::new(cfg.network.clone(), 0);
    assert!(matches!(
        train_stage1(init, &[], &cfg),
        Err(TrainingError::EmptyDataset)
    ));
}

fn block_gradients(params: &NetworkParams<f32>, stage2: bool) -> Vec<(String, f64)> {
    let data = toy_data(2, 32);
    let cfg = toy_config(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(&data, &cfg, &mut rng).unwrap();
    let z = gaussian_tensor(&[2, HIGH_CHANNELS, 12, 12], &mut rng);
    let graph = params.graph(true);
    let parts = batch_losses(&graph, &batch, &z, &cfg, stage2).unwrap();
    let total = total_loss_var(&parts, &cfg.weights, stage2).unwrap();
    let grads = backward(&total).unwrap();
    let names = params.weights.named();
    graph
        .weights
        .leaves()
        .iter()
        .zip(names)
        .map(|(v, (name, _))| {
            let g = grads
                .get(v)
                .map_or(0.0, |g| g.data().iter().map(|x| x.abs() as f64).sum());
            (name, g)
        })
        .collect()
}

#[test]
fn every_dense_block_receives_gradient() {
    let cfg = toy_config(1).network;
    for stage2 in [false, true] {
        let grads = block_gradients(&NetworkParams::random(cfg.clone(), 2), stage2);
        for (name, g) in &grads {
            if name.ends_with("weight") {
                assert!(*g > 0.0, "{name} has no gradient (stage2 {stage2})");
            }
        }
    }
    // From the identity start only the zeroed final layers can move.
    let grads = block_gradients(&NetworkParams::new(cfg.clone(), 2), false);
    let last = format!("layer{}.weight", cfg.layers - 1);
    for (name, g) in &grads {
        if name.ends_with(&last) {
            assert!(*g > 0.0, "{name}");
        }
    }
}

#[test]
fn gradient_check_on_a_small_network() {
    let opts = GradcheckOptions {
        network: NetworkConfig {
            blocks: 1,
            hidden: 2,
            layers: 2,
            ..Default::default()
        },
        size: 8,
        ..Default::default()
    };
    let report = gradient_check(&opts).unwrap();
    assert_eq!(report.checked, opts.network.param_count());
    assert!(report.passed(), "{:?}", report.failures);
}
