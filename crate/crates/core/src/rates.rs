//! Information rates, leakages and the secrecy-rate combiner. All rates are
//! in bits per channel use and carry the half-duplex factor 1/2.

use serde::Serialize;

use crate::config::{ChannelRealization, ImpairmentProfile};
use crate::distortion::{phi_matrices, ProjectedMatrices, TauConstants};
use crate::error::{Error, Result};
use crate::linalg::{log2_det_hpd, outer, quad_form, solve_hpd, CMat, CVec};

fn half_log2(x: f64) -> f64 {
    0.5 * x.log2()
}

/// Destination rate from the projected matrices, with `w = H_perp v`.
pub fn rate_destination(p_s: f64, p_j1: f64, v: &CVec, proj: &ProjectedMatrices, sigma2: f64) -> Result<f64> {
    let num = p_s * quad_form(&proj.mho_gf, v);
    let den = quad_form(&proj.gamma.at(p_s, p_j1), v) + sigma2;
    let r = half_log2(1.0 + num / den);
    if !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite destination rate (P_s={p_s}, P_J1={p_j1})"
        )));
    }
    Ok(r.max(0.0))
}

/// Per-relay transmit power `E|x_R,l|^2` from the signal model: the relay
/// scales its received signal, distortion and noise by `w_l^*`.
pub fn relay_powers(p_s: f64, p_j1: f64, w: &CVec, ch: &ChannelRealization, imp: &ImpairmentProfile, sigma2: f64) -> Vec<f64> {
    let krr2 = imp.k_r_r.powi(2);
    (0..w.len())
        .map(|l| {
            let f2 = ch.f_r[l].norm_sqr();
            let g2 = ch.g_r[l].norm_sqr();
            let rx = p_s * f2 * (1.0 + imp.k_s_t.powi(2))
                + p_j1 * g2 * (1.0 + imp.k_j1_t.powi(2))
                + krr2 * (p_s * f2 + p_j1 * g2)
                + sigma2;
            w[l].norm_sqr() * rx
        })
        .collect()
}

/// Destination rate evaluated in relay coordinates, with the per-relay
/// power matrix `Λ = diag(P_R,l)` appearing explicitly in the denominator.
pub fn rate_destination_direct(
    p_s: f64,
    p_j1: f64,
    w: &CVec,
    ch: &ChannelRealization,
    imp: &ImpairmentProfile,
    tau: &TauConstants,
    sigma2: f64,
) -> f64 {
    let phis = phi_matrices(ch);
    let krr2 = imp.k_r_r.powi(2);
    let psi_k = phis.gg.scale(p_j1 * imp.k_j1_t.powi(2))
        + phis.gg_diag.scale(p_j1 * krr2)
        + phis.gf.scale(p_s * imp.k_s_t.powi(2))
        + phis.gf_diag.scale(p_s * krr2)
        + phis.g.scale(sigma2);
    let lambda = relay_powers(p_s, p_j1, w, ch, imp, sigma2);
    let g_lambda_g: f64 = lambda
        .iter()
        .zip(ch.g_r.iter())
        .map(|(p, g)| p * g.norm_sqr())
        .sum();
    let num = p_s * quad_form(&phis.gf, w);
    let den = quad_form(&psi_k, w) + tau.tau_rd * g_lambda_g + sigma2;
    half_log2(1.0 + num / den)
}

/// SINR of relay `l` decoding the source from its own phase-I observation.
pub fn relay_sinr(l: usize, p_s: f64, p_j1: f64, ch: &ChannelRealization, tau: &TauConstants, sigma2: f64) -> f64 {
    let f2 = ch.f_r[l].norm_sqr();
    let g2 = ch.g_r[l].norm_sqr();
    p_s * f2 / (p_j1 * tau.tau_rj1 * g2 + p_s * tau.tau_rs * f2 + sigma2)
}

pub fn rate_relay_leakage(p_s: f64, p_j1: f64, ch: &ChannelRealization, tau: &TauConstants, sigma2: f64) -> Vec<f64> {
    (0..ch.n())
        .map(|l| half_log2(1.0 + relay_sinr(l, p_s, p_j1, ch, tau, sigma2)))
        .collect()
}

/// Eavesdropper's two-phase observation `y_E = H_E x_s + n_E`.
#[derive(Debug, Clone)]
pub struct EveStackedModel {
    pub h_e: CVec,
    pub q_e: CMat,
}

/// Builds `Q_E` as a sum over every independent noise source of
/// `variance * r r^H`, where `r` is the source's stacked response across the
/// two phases. Sources that reach both phases (the destination jammer and the
/// transmit distortions) produce the cross-phase blocks.
#[allow(clippy::too_many_arguments)]
pub fn eve_stacked_model(
    p_s: f64,
    p_j1: f64,
    p_j2: f64,
    w: &CVec,
    ch: &ChannelRealization,
    imp: &ImpairmentProfile,
    sigma2: f64,
) -> EveStackedModel {
    let ne = ch.n_e();
    let n = ch.n();
    let stack = |a: Option<&CVec>, b: Option<&CVec>| {
        let mut r = CVec::zeros(2 * ne);
        if let Some(a) = a {
            r.rows_mut(0, ne).copy_from(a);
        }
        if let Some(b) = b {
            r.rows_mut(ne, ne).copy_from(b);
        }
        r
    };
    let wc = w.conjugate();
    let c_fw: CVec = &ch.c_e * ch.f_r.component_mul(&wc);
    let c_gw: CVec = &ch.c_e * ch.g_r.component_mul(&wc);

    let mut q = CMat::zeros(2 * ne, 2 * ne);
    let mut add = |var: f64, r: CVec| {
        if var != 0.0 {
            q += outer(&r, &r).scale(var);
        }
    };
    // Destination jammer z1 and its transmit distortion.
    add(p_j1, stack(Some(&ch.q_e), Some(&c_gw)));
    add(p_j1 * imp.k_j1_t.powi(2), stack(Some(&ch.q_e), Some(&c_gw)));
    // Source transmit distortion.
    add(p_s * imp.k_s_t.powi(2), stack(Some(&ch.f_e), Some(&c_fw)));
    // Phase-II source jammer z2 and its distortion.
    add(p_j2, stack(None, Some(&ch.f_e)));
    add(p_j2 * imp.k_j2_t.powi(2), stack(None, Some(&ch.f_e)));
    // Thermal noise at Eve in both phases.
    for j in 0..ne {
        let mut e = CVec::zeros(ne);
        e[j] = 1.0.into();
        add(sigma2, stack(Some(&e), None));
        add(sigma2, stack(None, Some(&e)));
    }
    // Relay noise, relay receive and transmit distortion.
    let p_r = relay_powers(p_s, p_j1, w, ch, imp, sigma2);
    for l in 0..n {
        let col: CVec = ch.c_e.column(l).into_owned();
        let fwd = col.scale(1.0) * wc[l];
        let pi_ll = p_s * ch.f_r[l].norm_sqr() + p_j1 * ch.g_r[l].norm_sqr();
        add(sigma2, stack(None, Some(&fwd)));
        add(imp.k_r_r.powi(2) * pi_ll, stack(None, Some(&fwd)));
        add(imp.k_r_t.powi(2) * p_r[l], stack(None, Some(&col)));
    }

    let sp = p_s.sqrt();
    let fw: CVec = &ch.c_e * ch.f_r.component_mul(&wc);
    let h_e = stack(Some(&ch.f_e.scale(sp)), Some(&fw.scale(sp)));
    EveStackedModel { h_e, q_e: q }
}

/// `½ log2 det(I + H_E H_E^H Q_E^{-1})`.
pub fn rate_eve_general(model: &EveStackedModel) -> Result<f64> {
    let m = model.q_e.rows(0, model.q_e.nrows()).into_owned() + outer(&model.h_e, &model.h_e);
    let num = log2_det_hpd(&m);
    let den = log2_det_hpd(&model.q_e);
    match (num, den) {
        (Some(a), Some(b)) => Ok((0.5 * (a - b)).max(0.0)),
        _ => Err(Error::Solver("eavesdropper noise covariance is singular".into())),
    }
}

/// Rank-one form `½ log2(1 + H_E^H Q_E^{-1} H_E)`.
pub fn rate_eve_general_rank1(model: &EveStackedModel) -> Result<f64> {
    let x = solve_hpd(&model.q_e, &model.h_e)
        .ok_or_else(|| Error::Solver("eavesdropper noise covariance is singular".into()))?;
    Ok(half_log2(1.0 + model.h_e.dotc(&x).re))
}

/// Phase-I SINR at the eavesdropper when the relayed signal is nulled.
pub fn eve_sinr_nsb(p_s: f64, p_j1: f64, ch: &ChannelRealization, imp: &ImpairmentProfile, tau: &TauConstants, sigma2: f64) -> f64 {
    let ne = ch.n_e();
    let m = outer(&ch.q_e, &ch.q_e).scale(tau.tau_j1 * p_j1)
        + outer(&ch.f_e, &ch.f_e).scale(p_s * imp.k_s_t.powi(2))
        + CMat::identity(ne, ne).scale(sigma2);
    let x = solve_hpd(&m, &ch.f_e).expect("sigma2 > 0 keeps the matrix definite");
    p_s * ch.f_e.dotc(&x).re
}

pub fn rate_eve_nsb(p_s: f64, p_j1: f64, ch: &ChannelRealization, imp: &ImpairmentProfile, tau: &TauConstants, sigma2: f64) -> f64 {
    half_log2(1.0 + eve_sinr_nsb(p_s, p_j1, ch, imp, tau, sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Adversary {
    Eve,
    Relay(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    #[serde(rename = "I_D")]
    pub i_d: f64,
    #[serde(rename = "I_R")]
    pub i_r: Vec<f64>,
    #[serde(rename = "I_E")]
    pub i_e: f64,
    #[serde(rename = "R_s")]
    pub r_s: f64,
    pub binding_adversary: Adversary,
}

impl RateReport {
    pub fn max_leakage(&self) -> f64 {
        self.i_r.iter().copied().fold(self.i_e, f64::max)
    }
}

/// `R_s = [I_D - max(I_E, max_l I_R,l)]^+`. Ties go to Eve.
pub fn secrecy_rate(i_d: f64, i_r: Vec<f64>, i_e: f64) -> RateReport {
    let mut binding = Adversary::Eve;
    let mut worst = i_e;
    for (l, &r) in i_r.iter().enumerate() {
        if r > worst {
            worst = r;
            binding = Adversary::Relay(l);
        }
    }
    RateReport {
        i_d: i_d.max(0.0),
        r_s: (i_d - worst).max(0.0),
        i_r: i_r.into_iter().map(|r| r.max(0.0)).collect(),
        i_e: i_e.max(0.0),
        binding_adversary: binding,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, generate_realization, RandomState};
    use crate::distortion::{compute_tau, project, AffineMatrix};
    use crate::linalg::c;

    fn scalar(x: f64) -> CMat {
        CMat::from_element(1, 1, c(x, 0.0))
    }

    #[test]
    fn destination_scalar_example() {
        let sigma2 = 1e-3;
        let zero = scalar(0.0);
        let proj = ProjectedMatrices {
            mho_gf: scalar(1.0),
            mho_gg: zero.clone(),
            mho_gg_diag: zero.clone(),
            mho_gf_diag: zero.clone(),
            mho_g: scalar(1.0),
            z_gf_k: zero.clone(),
            gamma: AffineMatrix { constant: scalar(sigma2), ps: zero.clone(), pj: zero.clone() },
            ups_bar: AffineMatrix { constant: scalar(sigma2), ps: zero.clone(), pj: zero.clone() },
            ups_bar_ll: vec![],
        };
        let v = CVec::from_element(1, c(1.0, 0.0));
        let r = rate_destination(1.0, 0.0, &v, &proj, sigma2).unwrap();
        let want = 0.5 * (1.0f64 + 1.0 / 0.002).log2();
        assert!((r - want).abs() < 1e-12 && (r - 4.4836).abs() < 1e-3);
        let mut proj0 = proj.clone();
        proj0.mho_gf = zero;
        assert_eq!(rate_destination(1.0, 0.0, &v, &proj0, sigma2).unwrap(), 0.0);
    }

    fn unit_channel(n: usize, ne: usize) -> ChannelRealization {
        ChannelRealization {
            f_r: CVec::from_element(n, c(1.0, 0.0)),
            g_r: CVec::from_element(n, c(1.0, 0.0)),
            f_e: CVec::from_element(ne, c(1.0, 0.0)),
            q_e: CVec::from_element(ne, c(1.0, 0.0)),
            c_e: CMat::from_element(ne, n, c(1.0, 0.0)),
        }
    }

    #[test]
    fn relay_leakage_examples() {
        let tau = compute_tau(&ImpairmentProfile::ideal());
        let ch = unit_channel(3, 1);
        let r = rate_relay_leakage(1.0, 0.0, &ch, &tau, 1e-3);
        for x in &r {
            assert!((x - 0.5 * 1001f64.log2()).abs() < 1e-12);
            assert!((x - 4.9841).abs() < 1e-3);
        }
        assert!(rate_relay_leakage(0.0, 1.0, &ch, &tau, 1e-3).iter().all(|&x| x == 0.0));
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let x = rate_relay_leakage(1.0, 10f64.powi(k - 5), &ch, &tau, 1e-3)[0];
            assert!(x <= prev);
            prev = x;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn eve_nsb_scalar_example() {
        let imp = ImpairmentProfile::ideal();
        let tau = compute_tau(&imp);
        assert_eq!(tau.tau_j1, 1.0);
        let ch = unit_channel(3, 1);
        let r = rate_eve_nsb(1.0, 1.0, &ch, &imp, &tau, 1e-3);
        assert!((r - 0.5 * (1.0 + 1.0 / 1.001f64).log2()).abs() < 1e-12);
        assert!((r - 0.49964).abs() < 1e-5);
        assert!(rate_eve_nsb(1e-300, 1.0, &ch, &imp, &tau, 1e-3) < 1e-290);
    }

    #[test]
    fn eve_general_basics() {
        let m = EveStackedModel { h_e: CVec::zeros(2), q_e: CMat::identity(2, 2) };
        assert_eq!(rate_eve_general(&m).unwrap(), 0.0);
        let m = EveStackedModel { h_e: CVec::from_element(1, c(1.0, 0.0)), q_e: scalar(1.0) };
        assert!((rate_eve_general(&m).unwrap() - 0.5).abs() < 1e-15);
        assert!((rate_eve_general_rank1(&m).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eve_thermal_only() {
        let cfg = default_config();
        let ch = generate_realization(&cfg, &mut RandomState::from_seed(1));
        let m = eve_stacked_model(0.0, 0.0, 0.0, &CVec::zeros(cfg.n), &ch, &ImpairmentProfile::ideal(), 1e-3);
        assert!((m.q_e - CMat::identity(4, 4).scale(1e-3)).norm() < 1e-18);
    }

    #[test]
    fn determinant_and_rank_one_paths_agree() {
        let cfg = default_config();
        let mut rng = RandomState::from_seed(4);
        let ch = generate_realization(&cfg, &mut rng);
        let w = rng.complex_normal_vec(cfg.n);
        let m = eve_stacked_model(10.0, 5.0, 2.0, &w, &ch, &cfg.impairments, cfg.sigma2);
        let a = rate_eve_general(&m).unwrap();
        let b = rate_eve_general_rank1(&m).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn secrecy_combiner() {
        let r = secrecy_rate(2.0, vec![0.1, 0.3], 0.5);
        assert_eq!(r.r_s, 1.5);
        assert_eq!(r.binding_adversary, Adversary::Eve);
        let r = secrecy_rate(0.2, vec![0.1], 0.5);
        assert_eq!(r.r_s, 0.0);
        let r = secrecy_rate(2.0, vec![0.1, 0.9], 0.5);
        assert_eq!(r.binding_adversary, Adversary::Relay(1));
    }

    #[test]
    fn direct_and_projected_destination_rates_agree() {
        let cfg = default_config();
        let mut rng = RandomState::from_seed(8);
        let ch = generate_realization(&cfg, &mut rng);
        let basis = crate::nullspace::build_basis(&ch).unwrap();
        let imp = cfg.impairments;
        let tau = compute_tau(&imp);
        let proj = project(&phi_matrices(&ch), &tau, &imp, &ch, &basis.h_perp, cfg.sigma2).unwrap();
        let v = rng.complex_normal_vec(basis.d);
        let w = &basis.h_perp * &v;
        let a = rate_destination(30.0, 20.0, &v, &proj, cfg.sigma2).unwrap();
        let b = rate_destination_direct(30.0, 20.0, &w, &ch, &imp, &tau, cfg.sigma2);
        assert!((a - b).abs() <= 1e-9 * a);
        let p = relay_powers(30.0, 20.0, &w, &ch, &imp, cfg.sigma2);
        for (l, pl) in p.iter().enumerate() {
            let q = quad_form(&proj.ups_bar_ll[l].at(30.0, 20.0), &v);
            assert!((pl - q).abs() <= 1e-10 * pl.max(1e-12));
        }
        let total: f64 = p.iter().sum();
        assert!((total - quad_form(&proj.ups_bar.at(30.0, 20.0), &v)).abs() <= 1e-10 * total);
    }
}
