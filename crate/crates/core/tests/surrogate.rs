use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secrelay::config::{db_to_linear, NetworkConfig};
use secrelay::dnn::{self, Mlp, NormStats, Sample, SampleMeta, SurrogateModel, TrainConfig};
use secrelay::parallel::Execution;
use secrelay::spca::SpcaOptions;

fn small_cfg() -> NetworkConfig {
    NetworkConfig { seed: 3, ..NetworkConfig::with_budget(6, 2, db_to_linear(30.0)) }
}

fn synthetic(count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let theta: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut q = vec![theta[0].abs(), 10f64.powf(theta[1] - 2.0), 10f64.powf(theta[2] - 2.0)];
            q.extend((0..4).map(|k| theta[k + 3] * 0.5));
            Sample { format_version: dnn::FORMAT_VERSION, seed: i as u64, theta, q, meta: SampleMeta { n: 2, n_e: 1, index: i, redraws: 0 } }
        })
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, hidden: vec![16, 16], ..TrainConfig::default() }
}

#[test]
fn dataset_is_reproducible_and_labels_are_feasible() {
    let cfg = small_cfg();
    let opts = SpcaOptions::default();
    let a = dnn::generate_dataset(&cfg, 12, 5, &opts, Execution::Parallel, None).unwrap();
    let b = dnn::generate_dataset(&cfg, 12, 5, &opts, Execution::Sequential, None).unwrap();
    assert_eq!(a, b);
    for s in &a {
        assert_eq!(s.theta.len(), dnn::feature_dim(6, 2));
        assert_eq!(s.q.len(), dnn::label_dim(6));
        let ch = secrelay::config::generate_realization(&cfg, &mut secrelay::config::RandomState::from_seed(s.seed));
        let scn = secrelay::spca::Scenario::new(&cfg, &ch).unwrap();
        let v = scn.basis.h_perp.adjoint() * s.w();
        assert!((scn.lift(&v) - s.w()).norm() <= 1e-10 * s.w().norm());
        assert!(s.p_s() <= cfg.p_t && s.p_j1() <= cfg.p_j1_bar);
        let relay = scn.relay_powers(s.p_s(), s.p_j1(), &v);
        assert!(relay.iter().zip(&cfg.q_l).all(|(p, q)| *p <= q * (1.0 + 1e-9)));
        assert!(s.p_s() + s.p_j1() + relay.iter().sum::<f64>() <= cfg.q_tot * (1.0 + 1e-9));
        let r = scn.rate_report(s.p_s(), s.p_j1(), &v).unwrap();
        assert!((r.r_s - s.r_s()).abs() < 1e-9);
    }
}

#[test]
fn dataset_generation_resumes() {
    let cfg = small_cfg();
    let opts = SpcaOptions::default();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let full = dnn::generate_dataset(&cfg, 6, 8, &opts, Execution::Parallel, None).unwrap();
    dnn::generate_dataset(&cfg, 3, 8, &opts, Execution::Parallel, Some(&path)).unwrap();
    // Simulate an interrupted write.
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"format_version\":1,\"se");
    std::fs::write(&path, text).unwrap();
    let resumed = dnn::generate_dataset(&cfg, 6, 8, &opts, Execution::Parallel, Some(&path)).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(dnn::read_dataset(&path).unwrap().0, full);
    assert!(dnn::generate_dataset(&cfg, 6, 9, &opts, Execution::Parallel, Some(&path)).is_err());
}

#[test]
fn memorizes_a_repeated_sample() {
    let one = synthetic(1, 1).remove(0);
    let data: Vec<Sample> = (0..64).map(|_| one.clone()).collect();
    let tc = TrainConfig { keep_prob: 1.0, ..quick(400) };
    let (model, report) = dnn::train(&data, &tc).unwrap();
    assert!(report.train_mse.last().unwrap() < &1e-4);
    let out = model.net.forward(&model.norm.normalize(&one.theta)).unwrap();
    let target = dnn::encode_targets(&one.q);
    assert!(out.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-2));
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let data = synthetic(200, 2);
    let (m1, r1) = dnn::train(&data, &quick(30)).unwrap();
    let (m2, r2) = dnn::train(&data, &quick(30)).unwrap();
    assert_eq!(r1.val_mse, r2.val_mse);
    assert_eq!(m1, m2);
    assert!(r1.best_val_mse <= r1.final_val_mse);
    assert_eq!(r1.best_val_mse, r1.val_mse[r1.best_epoch]);
    assert!(r1.best_val_mse < r1.val_mse[0]);
}

#[test]
fn training_rejects_tiny_datasets() {
    assert!(dnn::train(&synthetic(63, 3), &quick(1)).is_err());
}

#[test]
fn model_json_round_trip() {
    let (model, _) = dnn::train(&synthetic(100, 4), &quick(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = SurrogateModel::load(&path).unwrap();
    assert_eq!(back, model);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["format_version", "arch", "norm", "layers"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["layers"][0]["act"], "relu");
    assert_eq!(json["layers"][2]["act"], "id");
}

#[test]
fn predictions_are_projected_onto_the_constraints() {
    let cfg = small_cfg();
    let data = dnn::generate_dataset(&cfg, 70, 6, &SpcaOptions::default(), Execution::Parallel, None).unwrap();
    let (model, _) = dnn::train(&data, &quick(20)).unwrap();
    for s in data.iter().take(10) {
        let ch = secrelay::config::generate_realization(&cfg, &mut secrelay::config::RandomState::from_seed(s.seed));
        let scn = secrelay::spca::Scenario::new(&cfg, &ch).unwrap();
        let p = dnn::predict(&model, &scn).unwrap();
        assert!(p.p_s <= cfg.p_t && p.p_j1 <= cfg.p_j1_bar);
        let relay = scn.relay_powers(p.p_s, p.p_j1, &p.v);
        assert!(relay.iter().zip(&cfg.q_l).all(|(x, q)| *x <= q * (1.0 + 1e-9)));
        assert!(p.p_s + p.p_j1 + relay.iter().sum::<f64>() <= cfg.q_tot * (1.0 + 1e-9));
        assert!(p.r_s >= 0.0 && p.r_s.is_finite());
    }
    let all: Vec<&Sample> = data.iter().collect();
    let report = dnn::evaluate(&model, &cfg, &all, Execution::Parallel).unwrap();
    assert_eq!(report.samples, 70);
    let other = NetworkConfig { seed: 3, ..NetworkConfig::with_budget(6, 2, db_to_linear(20.0)) };
    assert!(dnn::evaluate(&model, &other, &all, Execution::Parallel).is_err());
}

#[test]
fn complexity_estimators() {
    assert_eq!(dnn::complexity_spca(12, 2), 125_500.0);
    for n_e in 1..4 {
        let expected = (8.0 + ((n_e + 1) * (n_e + 1)) as f64) * ((5 + n_e) as f64).sqrt();
        assert!((dnn::complexity_spca(n_e + 1, n_e) - expected).abs() < 1e-9);
        let grid: Vec<f64> = (n_e + 1..40).map(|n| dnn::complexity_spca(n, n_e)).collect();
        assert!(grid.windows(2).all(|p| p[1] > p[0]));
    }
    assert_eq!(dnn::complexity_dnn_dims(&dnn::magnitude_arch(12, 2)), 229_632);
    assert_eq!(dnn::complexity_dnn_dims(&[1, 1]), 2);
    let net = Mlp::new(&dnn::magnitude_arch(12, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(dnn::complexity_dnn(&net), 229_632);
    for n in [12, 24, 48] {
        let mut arch = vec![dnn::feature_dim(n, 2)];
        arch.extend(dnn::HIDDEN);
        arch.push(dnn::label_dim(n));
        assert!((dnn::complexity_dnn_dims(&arch) as f64) < dnn::complexity_spca(n, 2) * 10.0);
    }
}

#[test]
fn gradient_check_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let arch: Vec<usize> = (0..rng.gen_range(2..5)).map(|_| rng.gen_range(1..7)).collect();
        let net = Mlp::new(&arch, &mut rng).unwrap();
        let x = DMatrix::from_fn(arch[0], 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(*arch.last().unwrap(), 3, |_, _| rng.gen_range(-1.0..1.0));
        assert!(dnn::gradient_check(&net, &x, &y, 5, &mut rng) < 1e-5);
    }
}

proptest! {
    #[test]
    fn normalization_round_trips(rows in proptest::collection::vec(proptest::collection::vec(-1e3..1e3f64, 4), 1..20)) {
        let ns = NormStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        for r in &rows {
            let back = ns.denormalize(&ns.normalize(r));
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn normalized_columns_are_standard(rows in proptest::collection::vec(proptest::collection::vec(-10.0..10.0f64, 3), 2..30)) {
        let ns = NormStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| ns.normalize(r)).collect();
        let n = z.len() as f64;
        for j in 0..3 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() <= 1e-10);
            if ns.sigma[j] > dnn::SIGMA_FLOOR {
                prop_assert!((sd - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn forward_output_is_finite(seed in 0u64..1000, x in proptest::collection::vec(-1e3..1e3f64, 5)) {
        let net = Mlp::new(&[5, 8, 8, 3], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(net.forward(&x).unwrap().iter().all(|v| v.is_finite()));
    }
}
