mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use secrelay::config::{db_to_linear, default_config, derive_seed, generate_realization, ImpairmentProfile, NetworkConfig, RandomState};
use secrelay::experiments::solve_instance;
use secrelay::linalg::{c, CVec};
use secrelay::nullspace::leakage;
use secrelay::oracle::{best_beamformer, brute_force_oracle};
use secrelay::rates;
use secrelay::spca::{Scenario, SpcaOptions};

fn scenario(cfg: &NetworkConfig, seed: u64) -> Scenario {
    let ch = generate_realization(cfg, &mut RandomState::from_seed(seed));
    Scenario::new(cfg, &ch).unwrap()
}

#[test]
fn solutions_respect_power_constraints_and_null_leakage() {
    let cfg = NetworkConfig::with_budget(6, 2, db_to_linear(30.0));
    let opts = SpcaOptions::default();
    for t in 0..20 {
        let inst = solve_instance(&cfg, derive_seed(1, 0, t), &opts).unwrap();
        let Some(sol) = inst.solution else { continue };
        let scn = &inst.scenario;
        assert!(sol.p_s > 0.0 && sol.p_s <= cfg.p_t * (1.0 + 1e-9));
        assert!(sol.p_j1 > 0.0 && sol.p_j1 <= cfg.p_j1_bar * (1.0 + 1e-9));
        let relay = scn.relay_powers(sol.p_s, sol.p_j1, &sol.v);
        for (p, cap) in relay.iter().zip(&cfg.q_l) {
            assert!(*p <= cap * (1.0 + 1e-9), "relay power {p} over cap {cap}");
        }
        let total = sol.p_s + sol.p_j1 + relay.iter().sum::<f64>();
        assert!(total <= cfg.q_tot * (1.0 + 1e-9));
        assert!(leakage(&scn.basis, &sol.w) <= 1e-10 * sol.w.norm());
        let report = scn.rate_report(sol.p_s, sol.p_j1, &sol.v).unwrap();
        assert!((report.r_s - sol.r_s_true.r_s).abs() < 1e-12);
        assert!(sol.objective_trace.windows(2).all(|p| p[1] >= p[0] - 1e-8));
    }
}

#[test]
fn fipsa_trace_is_non_increasing() {
    let cfg = default_config();
    let opts = SpcaOptions::default();
    for t in 0..10 {
        let inst = solve_instance(&cfg, derive_seed(2, 0, t), &opts).unwrap();
        let f = inst.fipsa.unwrap();
        assert!(f.s_trace.windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(f.feasible, f.s_final <= secrelay::fipsa::S_ZERO);
    }
}

#[test]
fn solve_is_deterministic() {
    let cfg = default_config();
    let opts = SpcaOptions::default();
    let a = solve_instance(&cfg, 77, &opts).unwrap().solution.unwrap();
    let b = solve_instance(&cfg, 77, &opts).unwrap().solution.unwrap();
    assert_eq!(a.v, b.v);
    assert_eq!(a.objective_trace, b.objective_trace);
}

#[test]
fn oracle_refinement_never_decreases() {
    let cfg = NetworkConfig { impairments: ImpairmentProfile::ideal(), ..NetworkConfig::with_budget(4, 1, 1000.0) };
    for t in 0..5 {
        let scn = scenario(&cfg, derive_seed(3, 0, t));
        let coarse = brute_force_oracle(&scn, 8);
        let fine = brute_force_oracle(&scn, 16);
        assert!(fine.r_s >= coarse.r_s);
    }
}

#[test]
fn oracle_one_dimensional_beamformer_sits_on_the_boundary() {
    let cfg = NetworkConfig { impairments: ImpairmentProfile::ideal(), ..NetworkConfig::with_budget(2, 1, 1000.0) };
    let scn = scenario(&cfg, 5);
    assert_eq!(scn.d(), 1);
    let (p_s, p_j1) = (1.0, 0.5);
    let v = best_beamformer(&scn, p_s, p_j1).unwrap();
    let relay = scn.relay_powers(p_s, p_j1, &v);
    let total_ok = (relay.iter().sum::<f64>() - (cfg.q_tot - p_s - p_j1)).abs() <= 1e-9 * cfg.q_tot;
    let cap_ok = relay.iter().zip(&cfg.q_l).any(|(p, q)| (p - q).abs() <= 1e-9 * q);
    assert!(total_ok || cap_ok, "beamformer is not on the power boundary: {relay:?}");
}

#[test]
fn spca_matches_oracle_on_a_small_ideal_instance() {
    let cfg = NetworkConfig { impairments: ImpairmentProfile::ideal(), ..NetworkConfig::with_budget(4, 1, 1000.0) };
    let opts = SpcaOptions::default();
    let inst = solve_instance(&cfg, 9, &opts).unwrap();
    let oracle = brute_force_oracle(&inst.scenario, 39);
    let spca = inst.solution.unwrap().r_s_true.r_s;
    assert!(spca >= oracle.r_s - 0.05, "SPCA {spca} vs oracle {}", oracle.r_s);
}

#[test]
fn eve_covariance_matches_simulation() {
    let cfg = NetworkConfig { impairments: ImpairmentProfile::uniform(0.15), ..NetworkConfig::with_budget(4, 2, 1000.0) };
    let ch = generate_realization(&cfg, &mut RandomState::from_seed(11));
    let w = CVec::from_fn(4, |i, _| c(0.3 * i as f64 - 0.4, 0.2));
    let (p_s, p_j1, p_j2) = (1.0, 0.7, 0.4);
    let analytic = rates::eve_stacked_model(p_s, p_j1, p_j2, &w, &ch, &cfg.impairments, cfg.sigma2).q_e;
    let draw = common::EveDraw { p_s, p_j1, p_j2, w: &w, ch: &ch, imp: &cfg.impairments, sigma2: cfg.sigma2 };
    let empirical = common::empirical_eve_covariance(&draw, 200_000, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(common::frobenius_relative(&empirical, &analytic) < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn secrecy_rate_is_clamped_difference(i_d in 0.0..10.0f64, i_e in 0.0..10.0f64, i_r in proptest::collection::vec(0.0..10.0f64, 1..8)) {
        let r = rates::secrecy_rate(i_d, i_r.clone(), i_e);
        let worst = i_r.iter().copied().fold(i_e, f64::max);
        prop_assert!(r.r_s >= 0.0);
        prop_assert!((r.r_s - (i_d - worst).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn eve_covariance_is_hermitian_psd(seed in 0u64..1000, p_s in 0.01..10.0f64, p_j1 in 0.0..10.0f64, p_j2 in 0.0..10.0f64) {
        let cfg = NetworkConfig::with_budget(5, 2, 1000.0);
        let ch = generate_realization(&cfg, &mut RandomState::from_seed(seed));
        let w = CVec::from_fn(5, |i, _| c((seed as f64 + i as f64).sin(), (i as f64).cos()));
        let q = rates::eve_stacked_model(p_s, p_j1, p_j2, &w, &ch, &cfg.impairments, cfg.sigma2).q_e;
        prop_assert!(secrelay::linalg::hermitian_defect(&q) < 1e-9 * q.norm());
        prop_assert!(secrelay::linalg::min_eigenvalue(&q) >= cfg.sigma2 * (1.0 - 1e-9));
        for i in 0..q.nrows() {
            prop_assert!(q[(i, i)].re >= cfg.sigma2 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn leakages_fall_as_jamming_rises(seed in 0u64..1000, p_s in 0.01..10.0f64, p_lo in 0.0..10.0f64, extra in 0.0..10.0f64) {
        let cfg = default_config();
        let scn = scenario(&cfg, seed);
        let imp = &cfg.impairments;
        let lo = rates::rate_eve_nsb(p_s, p_lo, &scn.ch, imp, &scn.tau, cfg.sigma2);
        let hi = rates::rate_eve_nsb(p_s, p_lo + extra, &scn.ch, imp, &scn.tau, cfg.sigma2);
        prop_assert!(hi <= lo + 1e-12);
        let r_lo = rates::rate_relay_leakage(p_s, p_lo, &scn.ch, &scn.tau, cfg.sigma2);
        let r_hi = rates::rate_relay_leakage(p_s, p_lo + extra, &scn.ch, &scn.tau, cfg.sigma2);
        prop_assert!(r_lo.iter().zip(&r_hi).all(|(a, b)| b <= &(a + 1e-12)));
    }

    #[test]
    fn lifted_weights_are_nulled(seed in 0u64..1000, re in proptest::collection::vec(-1.0..1.0f64, 10), im in proptest::collection::vec(-1.0..1.0f64, 10)) {
        let scn = scenario(&default_config(), seed);
        let v = CVec::from_fn(10, |i, _| c(re[i], im[i]));
        let w = scn.lift(&v);
        prop_assert!(leakage(&scn.basis, &w) <= 1e-12 * w.norm().max(1.0));
        prop_assert!((w.norm() - v.norm()).abs() <= 1e-12 * v.norm().max(1.0));
    }
}
