//! Impairment-derived constants and the structured matrices built from them.

use crate::config::{ChannelRealization, ImpairmentProfile};
use crate::error::{Error, Result};
use crate::linalg::{c, diag_real, outer, CMat, CVec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauConstants {
    pub tau_rd: f64,
    pub tau_rs: f64,
    pub tau_rj1: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Jamming power seen by the eavesdropper per unit jammer power: the
    /// signal plus its transmit distortion, with an ideal receiver at Eve.
    pub tau_j1: f64,
}

pub fn compute_tau(imp: &ImpairmentProfile) -> TauConstants {
    let tau_rd = imp.k_r_t.powi(2) + imp.k_d_r.powi(2);
    let tau_rs = imp.k_s_t.powi(2) + imp.k_r_r.powi(2);
    let tau_rj1 = 1.0 + imp.k_j1_t.powi(2) + imp.k_r_r.powi(2);
    let krr2 = imp.k_r_r.powi(2);
    TauConstants {
        tau_rd,
        tau_rs,
        tau_rj1,
        k1: tau_rd * tau_rj1 + krr2,
        k2: tau_rd * (1.0 + tau_rs) + krr2,
        k3: 1.0 + tau_rd,
        tau_j1: 1.0 + imp.k_j1_t.powi(2),
    }
}

/// The five `N x N` matrices built from `G = diag(g_R)` and `F = diag(f_R)`.
#[derive(Debug, Clone)]
pub struct PhiMatrices {
    /// `G f f^H G^H`.
    pub gf: CMat,
    /// `G g g^H G^H`.
    pub gg: CMat,
    /// `diag(|g_l|^4)`.
    pub gg_diag: CMat,
    /// `diag(|g_l|^2 |f_l|^2)`.
    pub gf_diag: CMat,
    /// `diag(|g_l|^2)`.
    pub g: CMat,
}

pub fn phi_matrices(ch: &ChannelRealization) -> PhiMatrices {
    let gf: CVec = ch.g_r.component_mul(&ch.f_r);
    let gg: CVec = ch.g_r.component_mul(&ch.g_r);
    let g2: Vec<f64> = ch.g_r.iter().map(|z| z.norm_sqr()).collect();
    let f2: Vec<f64> = ch.f_r.iter().map(|z| z.norm_sqr()).collect();
    PhiMatrices {
        gf: outer(&gf, &gf),
        gg: outer(&gg, &gg),
        gg_diag: diag_real(&g2.iter().map(|x| x * x).collect::<Vec<_>>()),
        gf_diag: diag_real(&g2.iter().zip(&f2).map(|(a, b)| a * b).collect::<Vec<_>>()),
        g: diag_real(&g2),
    }
}

/// `Π(P_s, P_J1) = diag(P_s |f_l|^2 + P_J1 |g_l|^2)`; the relay receive
/// distortion covariance is `k_R_r^2 Π`.
pub fn relay_input_distortion(p_s: f64, p_j1: f64, ch: &ChannelRealization) -> CMat {
    let d: Vec<f64> = ch
        .f_r
        .iter()
        .zip(ch.g_r.iter())
        .map(|(f, g)| p_s * f.norm_sqr() + p_j1 * g.norm_sqr())
        .collect();
    diag_real(&d)
}

/// `M(P_s, P_J1) = constant + P_s * ps + P_J1 * pj`.
#[derive(Debug, Clone)]
pub struct AffineMatrix {
    pub constant: CMat,
    pub ps: CMat,
    pub pj: CMat,
}

impl AffineMatrix {
    pub fn at(&self, p_s: f64, p_j1: f64) -> CMat {
        &self.constant + self.ps.scale(p_s) + self.pj.scale(p_j1)
    }
}

/// Matrices projected onto the null space, all `d x d`.
#[derive(Debug, Clone)]
pub struct ProjectedMatrices {
    pub mho_gf: CMat,
    pub mho_gg: CMat,
    pub mho_gg_diag: CMat,
    pub mho_gf_diag: CMat,
    pub mho_g: CMat,
    /// Jammer-independent distortion of the source signal at the destination,
    /// `H^H (k2 Φ_GF + k_s_t^2 Φ_Gf) H`.
    pub z_gf_k: CMat,
    /// Interference-plus-distortion matrix at the destination.
    pub gamma: AffineMatrix,
    /// Total relay transmit power matrix.
    pub ups_bar: AffineMatrix,
    /// Per-relay transmit power matrices; they sum to `ups_bar`.
    pub ups_bar_ll: Vec<AffineMatrix>,
}

fn sandwich(h: &CMat, m: &CMat) -> CMat {
    h.adjoint() * m * h
}

pub fn project(
    phis: &PhiMatrices,
    tau: &TauConstants,
    imp: &ImpairmentProfile,
    ch: &ChannelRealization,
    h_perp: &CMat,
    sigma2: f64,
) -> Result<ProjectedMatrices> {
    let n = phis.g.nrows();
    if h_perp.nrows() != n || ch.n() != n {
        return Err(Error::Dimension(format!(
            "basis has {} rows, matrices are {n}x{n}",
            h_perp.nrows()
        )));
    }
    let mho_gf = sandwich(h_perp, &phis.gf);
    let mho_gg = sandwich(h_perp, &phis.gg);
    let mho_gg_diag = sandwich(h_perp, &phis.gg_diag);
    let mho_gf_diag = sandwich(h_perp, &phis.gf_diag);
    let mho_g = sandwich(h_perp, &phis.g);
    let kst2 = imp.k_s_t.powi(2);
    let kj2 = imp.k_j1_t.powi(2);
    let z_gf_k = mho_gf_diag.scale(tau.k2) + mho_gf.scale(kst2);
    let gamma = AffineMatrix {
        constant: mho_g.scale(sigma2 * tau.k3),
        ps: z_gf_k.clone(),
        pj: mho_gg.scale(kj2) + mho_gg_diag.scale(tau.k1),
    };

    let f2: Vec<f64> = ch.f_r.iter().map(|z| z.norm_sqr()).collect();
    let g2: Vec<f64> = ch.g_r.iter().map(|z| z.norm_sqr()).collect();
    let mut ups_bar_ll = Vec::with_capacity(n);
    for l in 0..n {
        // h_l h_l^H with h_l the conjugated l-th row of H_perp.
        let h_l: CVec = h_perp.row(l).adjoint();
        let e = outer(&h_l, &h_l);
        ups_bar_ll.push(AffineMatrix {
            constant: e.scale(sigma2),
            ps: e.scale((1.0 + tau.tau_rs) * f2[l]),
            pj: e.scale(tau.tau_rj1 * g2[l]),
        });
    }
    let ff = diag_real(&f2);
    let gg = diag_real(&g2);
    let hh = h_perp.adjoint() * h_perp;
    let ups_bar = AffineMatrix {
        constant: hh.scale(sigma2),
        ps: sandwich(h_perp, &ff).scale(1.0 + tau.tau_rs),
        pj: sandwich(h_perp, &gg).scale(tau.tau_rj1),
    };
    Ok(ProjectedMatrices {
        mho_gf,
        mho_gg,
        mho_gg_diag,
        mho_gf_diag,
        mho_g,
        z_gf_k,
        gamma,
        ups_bar,
        ups_bar_ll,
    })
}

/// Unprojected `Ψ̃_k(P)`, the destination interference-plus-distortion matrix
/// in relay coordinates.
pub fn psi_tilde(phis: &PhiMatrices, tau: &TauConstants, imp: &ImpairmentProfile, p_s: f64, p_j1: f64, sigma2: f64) -> CMat {
    phis.gg.scale(p_j1 * imp.k_j1_t.powi(2))
        + phis.gg_diag.scale(p_j1 * tau.k1)
        + phis.gf_diag.scale(p_s * tau.k2)
        + phis.gf.scale(p_s * imp.k_s_t.powi(2))
        + phis.g.scale(sigma2 * tau.k3)
}

pub fn identity_basis(n: usize) -> CMat {
    CMat::from_diagonal_element(n, n, c(1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, generate_realization, RandomState};
    use crate::linalg::{hermitian_defect, min_eigenvalue, trace_re};

    #[test]
    fn tau_ideal() {
        let t = compute_tau(&ImpairmentProfile::ideal());
        assert_eq!(
            (t.tau_rd, t.tau_rs, t.tau_rj1, t.k1, t.k2, t.k3),
            (0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn tau_default_levels() {
        let t = compute_tau(&ImpairmentProfile::uniform(0.08));
        assert!((t.tau_rd - 0.0128).abs() < 1e-15);
        assert!((t.tau_rj1 - 1.0128).abs() < 1e-15);
        assert!((t.k1 - 0.01936384).abs() < 1e-15);
    }

    #[test]
    fn tau_relay_transmit_only() {
        let imp = ImpairmentProfile {
            k_r_t: 0.2,
            ..ImpairmentProfile::ideal()
        };
        let t = compute_tau(&imp);
        assert!((t.tau_rd - 0.04).abs() < 1e-15);
        assert!((t.k3 - 1.04).abs() < 1e-15);
    }

    fn unit_channel(n: usize) -> ChannelRealization {
        let one = CVec::from_element(n, c(1.0, 0.0));
        ChannelRealization {
            f_r: one.clone(),
            g_r: one,
            f_e: CVec::from_element(1, c(1.0, 0.0)),
            q_e: CVec::from_element(1, c(1.0, 0.0)),
            c_e: CMat::from_element(1, n, c(1.0, 0.0)),
        }
    }

    #[test]
    fn phi_unit_channels() {
        let p = phi_matrices(&unit_channel(3));
        assert!((p.gf.clone() - CMat::from_element(3, 3, c(1.0, 0.0))).norm() < 1e-15);
        let mut ch = unit_channel(3);
        ch.g_r = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let p = phi_matrices(&ch);
        assert!((p.g - diag_real(&[1.0, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn phi_random_is_hermitian_psd() {
        let cfg = default_config();
        let ch = generate_realization(&cfg, &mut RandomState::from_seed(3));
        let p = phi_matrices(&ch);
        for m in [&p.gf, &p.gg, &p.gg_diag, &p.gf_diag, &p.g] {
            assert!(hermitian_defect(m) < 1e-12);
            assert!(min_eigenvalue(m) >= -1e-12 * trace_re(m));
        }
    }

    #[test]
    fn distortion_diagonal() {
        let ch = unit_channel(4);
        assert!(relay_input_distortion(0.0, 0.0, &ch).norm() == 0.0);
        let id = identity_basis(4);
        assert!((relay_input_distortion(1.0, 0.0, &ch) - id).norm() < 1e-15);
        let cfg = default_config();
        let ch = generate_realization(&cfg, &mut RandomState::from_seed(5));
        let m = relay_input_distortion(2.0, 3.0, &ch);
        for l in 0..cfg.n {
            let want = 2.0 * ch.f_r[l].norm_sqr() + 3.0 * ch.g_r[l].norm_sqr();
            assert_eq!(m[(l, l)].re, want);
        }
    }

    #[test]
    fn ideal_hardware_collapse() {
        let cfg = default_config();
        let ch = generate_realization(&cfg, &mut RandomState::from_seed(9));
        let imp = ImpairmentProfile::ideal();
        let tau = compute_tau(&imp);
        let phis = phi_matrices(&ch);
        let psi = psi_tilde(&phis, &tau, &imp, 3.0, 4.0, cfg.sigma2);
        assert!((psi - phis.g.scale(cfg.sigma2)).norm() == 0.0);
        let id = identity_basis(cfg.n);
        let proj = project(&phis, &tau, &imp, &ch, &id, cfg.sigma2).unwrap();
        assert!(proj.z_gf_k.norm() == 0.0);
        assert!((proj.gamma.at(3.0, 4.0) - phis.g.scale(cfg.sigma2)).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg = default_config();
        let ch = generate_realization(&cfg, &mut RandomState::from_seed(9));
        let imp = cfg.impairments;
        let r = project(&phi_matrices(&ch), &compute_tau(&imp), &imp, &ch, &identity_basis(5), 1e-3);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
