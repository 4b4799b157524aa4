use cfmimo::autodiff::{AdamConfig, BnMode, Graph};
use cfmimo::sim::{ChannelSet, LinkParams};
use cfmimo::train::{
    batch_loss, curve_csv, draw_lambda, generate_dataset, optimizers, train, train_step, Policy, TrainConfig, CURVE_HEADER,
};
use cfmimo::Grid;

fn small() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.system.m = 2;
    cfg.system.k = 3;
    cfg.system.n_t = 2;
    cfg.n_train = 6;
    cfg.batch_size = 3;
    cfg.epochs = 2;
    cfg.seed = 4;
    cfg
}

fn data(cfg: &TrainConfig, n: usize) -> Vec<ChannelSet<f64>> {
    generate_dataset::<f64>(&cfg.system, n, cfg.seed).unwrap().into_iter().map(|s| s.channels).collect()
}

fn lambdas(cfg: &TrainConfig, n: usize) -> Vec<Grid<f64>> {
    (0..n).map(|i| draw_lambda(cfg.seed, i as u64, cfg.system.k, cfg.system.k)).collect()
}

#[test]
fn penalty_at_uniform_half_matches_hand_value() {
    let mut cfg = small();
    cfg.system.k = 2;
    cfg.feature_enhancement = false;
    let params = LinkParams::from_config(&cfg.system);
    let frames = data(&cfg, 2);
    let batch: Vec<&ChannelSet<f64>> = frames.iter().collect();
    for dual in [true, false] {
        let policy = Policy::<f64>::new(&cfg, dual).unwrap();
        let mut g = Graph::new();
        let out = batch_loss(&mut g, &policy, &batch, None, &params, 0.2, BnMode::Train).unwrap();
        let per_entry = 0.5f64.ln().powi(2);
        assert!((per_entry - 0.4805).abs() < 1e-4);
        assert!((out.penalty - 4.0 * per_entry).abs() < 1e-12, "{}", out.penalty);
        assert!((out.loss_value - (-out.net_se + 0.2 * out.penalty)).abs() < 1e-12);
        assert!((out.tau_p - 1.5).abs() < 1e-12);

        let mut g = Graph::new();
        let out = batch_loss(&mut g, &policy, &batch, None, &params, 0.0, BnMode::Train).unwrap();
        assert!((out.loss_value + out.net_se).abs() < 1e-12);
    }
}

#[test]
fn one_step_updates_both_models_and_reaches_pilot_weights() {
    let cfg = small();
    let params = LinkParams::from_config(&cfg.system);
    let frames = data(&cfg, 3);
    let batch: Vec<&ChannelSet<f64>> = frames.iter().collect();
    let lam = lambdas(&cfg, 3);
    let mut policy = Policy::<f64>::new(&cfg, true).unwrap();

    let mut g = Graph::new();
    let out = batch_loss(&mut g, &policy, &batch, Some(&lam), &params, cfg.penalty_weight, BnMode::Train).unwrap();
    let grads = g.backward(out.loss).unwrap();
    let pilot = policy.pilot();
    let pg = pilot.params.grads(&g, &grads);
    for (id, p) in pilot.params.iter().enumerate() {
        if p.trainable && !p.name.starts_with("bn_") {
            let norm: f64 = pg[id].as_ref().map_or(0.0, |t| t.data().iter().map(|v| v * v).sum());
            assert!(norm > 0.0, "no gradient reaches {} (layer {})", p.name, p.layer);
        }
    }

    let before = policy.clone();
    let mut adam = optimizers(&policy, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    train_step(&mut policy, &batch, Some(&lam), &params, cfg.penalty_weight, &mut adam).unwrap();
    let (Policy::Dts { pilot: p0, power: w0 }, Policy::Dts { pilot: p1, power: w1 }) = (&before, &policy) else {
        panic!("expected DTS")
    };
    let changed = |a: &cfmimo::autodiff::ParamSet<f64>, b: &cfmimo::autodiff::ParamSet<f64>| {
        (0..a.len()).filter(|&i| a.get(i).trainable).all(|i| a.value(i).data() != b.value(i).data())
    };
    assert!(changed(&p0.params, &p1.params));
    assert!(changed(&w0.params, &w1.params));
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let cfg = small();
    let params = LinkParams::from_config(&cfg.system);
    let frames = data(&cfg, 4);
    let batch: Vec<&ChannelSet<f64>> = frames.iter().collect();
    let lam = lambdas(&cfg, 4);
    for dual in [true, false] {
        let mut policy = Policy::<f64>::new(&cfg, dual).unwrap();
        let mut adam = optimizers(&policy, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        let losses: Vec<f64> = (0..50)
            .map(|_| train_step(&mut policy, &batch, Some(&lam), &params, cfg.penalty_weight, &mut adam).unwrap().loss_value)
            .collect();
        let head = losses[..5].iter().sum::<f64>() / 5.0;
        let tail = losses[45..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "dual={dual}: {head} -> {tail}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = small();
    let run = |cfg: &TrainConfig, dual: bool| {
        let mut d = generate_dataset::<f64>(&cfg.system, cfg.n_train, cfg.seed).unwrap();
        train(cfg, dual, &mut d).unwrap()
    };
    for dual in [true, false] {
        let a = run(&cfg, dual);
        let b = run(&cfg, dual);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policy.to_checkpoint(), b.policy.to_checkpoint());
        assert_eq!(a.curve.len(), cfg.epochs * cfg.n_train / cfg.batch_size);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(run(&other, dual).policy.to_checkpoint(), a.policy.to_checkpoint());
    }
}

#[test]
fn curve_csv_has_one_line_per_step() {
    let cfg = small();
    let mut d = generate_dataset::<f64>(&cfg.system, cfg.n_train, cfg.seed).unwrap();
    let out = train(&cfg, false, &mut d).unwrap();
    let csv = curve_csv(&out.curve);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CURVE_HEADER);
    assert_eq!(lines.len(), out.curve.len() + 1);
    assert!(out.curve.iter().all(|r| r.loss.is_finite() && r.tau_p >= 1.0 && r.tau_p <= 3.0));
}

#[test]
fn dataset_is_deterministic_and_distinct() {
    let cfg = small();
    let a = generate_dataset::<f64>(&cfg.system, 5, 1).unwrap();
    let b = generate_dataset::<f64>(&cfg.system, 5, 1).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.seed, y.seed);
        assert_eq!(x.channels.beta.as_slice(), y.channels.beta.as_slice());
    }
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            assert_ne!(a[i].channels.beta.as_slice(), a[j].channels.beta.as_slice());
        }
    }
    let c = generate_dataset::<f64>(&cfg.system, 5, 2).unwrap();
    assert_ne!(a[0].channels.beta.as_slice(), c[0].channels.beta.as_slice());
}

#[test]
fn invalid_settings_are_rejected() {
    let mut cfg = small();
    cfg.batch_size = 1;
    assert!(cfg.validate().is_err());
    let mut cfg = small();
    cfg.fixed_tau = Some(cfg.system.tau_c + 1);
    assert!(cfg.validate().is_err());
    let cfg = small();
    let mut d = generate_dataset::<f64>(&cfg.system, 1, 0).unwrap();
    assert!(train(&cfg, true, &mut d).is_err());
}
