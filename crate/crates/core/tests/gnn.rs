use cfmimo::autodiff::{BnMode, Graph, Tensor};
use cfmimo::gnn::checks::{degeneracy, pilot_equivariance_error, power_equivariance_error, random_association, random_equivalent, random_lambda};
use cfmimo::gnn::{
    attention_scores, beta_feature, build_pilot_graph, build_power_graph, GnnConfig, PilotGnn, PilotIndex, PowerGnn, Variant,
};
use cfmimo::linalg::Grid;
use cfmimo::rng::{stream_rng, Stream};
use cfmimo::sim::{random_beta, Association};

const RHO: f64 = -110.0;

#[test]
fn power_gnn_is_equivariant() {
    for seed in 0..20 {
        let e = power_equivariance_error(seed).unwrap();
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn pilot_and_sts_gnns_are_equivariant() {
    for variant in [Variant::DtsPilot, Variant::Sts] {
        for seed in 0..20 {
            let e = pilot_equivariance_error(variant, seed).unwrap();
            assert!(e < 1e-6, "{variant:?} seed {seed}: {e}");
        }
    }
}

#[test]
fn without_features_columns_are_uniform_and_duplicates_tie() {
    for variant in [Variant::DtsPilot, Variant::Sts] {
        for seed in 0..20 {
            let d = degeneracy(variant, false, seed).unwrap();
            assert!(d.uniform && d.duplicates_tied, "{variant:?} seed {seed}");
            assert_ne!(d.power_tied, Some(false));
        }
    }
}

#[test]
fn random_features_break_both_degeneracies() {
    for seed in 0..20 {
        let d = degeneracy(Variant::Sts, true, seed).unwrap();
        assert!(!d.uniform && !d.duplicates_tied, "seed {seed}");
    }
}

#[test]
fn zero_weights_split_power_equally() {
    let mut model = PowerGnn::<f64>::new(GnnConfig::new(Variant::DtsPower, RHO), 3).unwrap();
    for id in 0..model.params.len() {
        if model.params.get(id).trainable {
            model.params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = stream_rng(1, Stream::Sample, 0);
    let assoc = Association::new(Grid::from_rows(vec![vec![true, true, true], vec![false, true, false]]).unwrap()).unwrap();
    let g = random_equivalent(&mut rng, &assoc);
    let p = model.infer(&build_power_graph(&[&g], &[&assoc], 1e5).unwrap(), 2.0).unwrap();
    for k in 0..3 {
        assert!((p[0][(0, k)] - 2.0 / 3.0).abs() < 1e-15);
    }
    // a single served UE gets sigmoid(0) of the budget
    assert!((p[0][(1, 1)] - 1.0).abs() < 1e-15);
    assert_eq!(p[0][(1, 0)], 0.0);
}

#[test]
fn outputs_respect_budgets_and_column_sums() {
    let mut rng = stream_rng(9, Stream::Sample, 0);
    let power = PowerGnn::<f64>::new(GnnConfig::new(Variant::DtsPower, RHO), 1).unwrap();
    let sts = PilotGnn::<f64>::new(GnnConfig::new(Variant::Sts, RHO), 1).unwrap();
    for _ in 0..10 {
        let assocs: Vec<Association> = (0..3).map(|_| random_association(&mut rng, 3, 5)).collect();
        let ar: Vec<&Association> = assocs.iter().collect();
        let gs: Vec<_> = assocs.iter().map(|a| random_equivalent(&mut rng, a)).collect();
        let gr: Vec<_> = gs.iter().collect();
        for p in power.infer(&build_power_graph(&gr, &ar, 1e5).unwrap(), 0.2).unwrap() {
            for m in 0..3 {
                assert!(p.row(m).iter().sum::<f64>() <= 0.2 + 1e-12);
            }
        }
        let betas: Vec<Grid<f64>> = (0..3).map(|_| random_beta(&mut rng, 3, 5, -140.0, -80.0)).collect();
        let br: Vec<_> = betas.iter().collect();
        let lam: Vec<_> = (0..3).map(|_| random_lambda(&mut rng, 5, 5)).collect();
        let (xs, ps) = sts.infer(&build_pilot_graph(&br, &ar, Some(&lam), 5, RHO).unwrap(), 0.2).unwrap();
        for (x, (p, a)) in xs.iter().zip(ps.unwrap().iter().zip(&assocs)) {
            for k in 0..5 {
                assert!((x.column(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for m in 0..3 {
                assert!(p.row(m).iter().sum::<f64>() <= 0.2 + 1e-12);
                for k in 0..5 {
                    if !a.get(m, k) {
                        assert_eq!(p[(m, k)], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn single_edge_sts_reduces_to_self_terms() {
    let mut cfg = GnnConfig::new(Variant::Sts, RHO);
    cfg.widths = vec![2];
    let model = PilotGnn::<f64>::new(cfg, 4).unwrap();
    let beta = Grid::filled(1, 1, 1e-10);
    let graph = build_pilot_graph(&[&beta], &[&Association::full(1, 1)], None, 1, RHO).unwrap();
    let (x, p) = model.infer(&graph, 0.5).unwrap();
    assert_eq!(x[0][(0, 0)], 1.0);
    let pv = &model.params;
    let q = pv.value(pv.find(1, "Q_AP_1").unwrap());
    let u = pv.value(pv.find(2, "u_out").unwrap());
    let d = [beta_feature(1e-10, RHO), 1.0];
    let z: f64 = (0..2).map(|c| (d[0] * q.at(0, c) + d[1] * q.at(1, c)) * u.at(c, 0)).sum();
    let expect = 0.5 / (1.0 + (-z).exp());
    assert!((p.unwrap()[0][(0, 0)] - expect).abs() < 1e-12);
}

#[test]
fn attention_reflects_lsf_similarity() {
    // width-1 features equal to the beta feature; c_jk = tanh(mean_m f_mj f_mk)
    let idx = PilotIndex::new(1, 3, 2, 2);
    let f = [0.3, -0.7, 1.1, 0.2, -0.4, 0.9];
    let mut g = Graph::<f64>::new();
    let d = g.constant(Tensor::matrix(6, 1, f.to_vec()).unwrap());
    let c = attention_scores(&mut g, &idx, d, d).unwrap();
    let c = g.value(c);
    for j in 0..2 {
        for k in 0..2 {
            let dot: f64 = (0..3).map(|m| f[m * 2 + j] * f[m * 2 + k]).sum::<f64>() / 3.0;
            assert!((c.at(j * 2 + k, 0) - dot.tanh()).abs() < 1e-15);
        }
    }
    assert_eq!(c.at(1, 0), c.at(2, 0));
}

#[test]
fn batch_norm_running_stats_follow_momentum() {
    let mut model = PowerGnn::<f64>::new(GnnConfig::new(Variant::DtsPower, RHO), 2).unwrap();
    let mut rng = stream_rng(2, Stream::Sample, 0);
    let assoc = random_association(&mut rng, 3, 4);
    let gh = random_equivalent(&mut rng, &assoc);
    let graph = build_power_graph(&[&gh], &[&assoc], 1e5).unwrap();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &graph, 1.0, BnMode::Train).unwrap();
    assert_eq!(out.bn.len(), 6);
    let id = model.params.find(1, "bn_sig_mean").unwrap();
    // first-layer pre-activation of the SIG edges is not available here,
    // so check against a second application: the update is affine
    model.apply_bn(&out.bn);
    let once = model.params.value(id).clone();
    model.apply_bn(&out.bn);
    let twice = model.params.value(id).clone();
    for c in 0..once.cols() {
        let batch = once.at(0, c) / 0.1;
        assert!((twice.at(0, c) - (0.9 * once.at(0, c) + 0.1 * batch)).abs() < 1e-12);
    }
    let var = model.params.value(model.params.find(1, "bn_sig_var").unwrap());
    assert!(var.data().iter().all(|&v| v > 0.0 && v != 1.0));
}

#[test]
fn batching_does_not_mix_samples_at_inference() {
    let model = PilotGnn::<f64>::new(GnnConfig::new(Variant::Sts, RHO), 5).unwrap();
    let mut rng = stream_rng(5, Stream::Sample, 0);
    let betas: Vec<Grid<f64>> = (0..2).map(|_| random_beta(&mut rng, 2, 3, -140.0, -80.0)).collect();
    let assocs: Vec<_> = (0..2).map(|_| random_association(&mut rng, 2, 3)).collect();
    let lam: Vec<_> = (0..2).map(|_| random_lambda(&mut rng, 3, 3)).collect();
    let both = build_pilot_graph(&[&betas[0], &betas[1]], &[&assocs[0], &assocs[1]], Some(&lam), 3, RHO).unwrap();
    let (xb, _) = model.infer(&both, 1.0).unwrap();
    for s in 0..2 {
        let one = build_pilot_graph(&[&betas[s]], &[&assocs[s]], Some(std::slice::from_ref(&lam[s])), 3, RHO).unwrap();
        let (x1, _) = model.infer(&one, 1.0).unwrap();
        assert_eq!(x1[0], xb[s]);
    }
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let model = PilotGnn::<f64>::new(GnnConfig::new(Variant::DtsPilot, RHO), 6).unwrap();
    let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
    assert!(json.contains("\"variant\":\"dts_pilot\""));
    let back = PilotGnn::<f64>::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
    let mut rng = stream_rng(6, Stream::Sample, 0);
    let beta = random_beta(&mut rng, 2, 3, -140.0, -80.0);
    let assoc = random_association(&mut rng, 2, 3);
    let lam = [random_lambda(&mut rng, 3, 3)];
    let graph = build_pilot_graph(&[&beta], &[&assoc], Some(&lam), 3, RHO).unwrap();
    assert_eq!(model.infer(&graph, 1.0).unwrap().0, back.infer(&graph, 1.0).unwrap().0);
}

#[test]
fn wrong_variant_or_graph_size_is_rejected() {
    assert!(PowerGnn::<f64>::new(GnnConfig::new(Variant::Sts, RHO), 0).is_err());
    assert!(PilotGnn::<f64>::new(GnnConfig::new(Variant::DtsPower, RHO), 0).is_err());
    let mut cfg = GnnConfig::new(Variant::DtsPilot, RHO);
    cfg.fixed_tau = Some(2);
    let model = PilotGnn::<f64>::new(cfg, 0).unwrap();
    let beta = Grid::filled(1, 3, 1e-10);
    let graph = build_pilot_graph(&[&beta], &[&Association::full(1, 3)], None, 3, RHO).unwrap();
    assert!(model.infer(&graph, 1.0).is_err());
    let graph = build_pilot_graph(&[&beta], &[&Association::full(1, 3)], None, 2, RHO).unwrap();
    let (x, _) = model.infer(&graph, 1.0).unwrap();
    assert_eq!((x[0].rows(), x[0].cols()), (2, 3));
}
