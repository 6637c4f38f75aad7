//! Oracles shared by the integration tests. They simulate or recompute from
//! the signal model directly and do not call the production assembly code.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use secrelay::config::{ChannelRealization, ImpairmentProfile};
use secrelay::linalg::{CMat, CVec};

fn cn(rng: &mut impl Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub struct EveDraw<'a> {
    pub p_s: f64,
    pub p_j1: f64,
    pub p_j2: f64,
    pub w: &'a CVec,
    pub ch: &'a ChannelRealization,
    pub imp: &'a ImpairmentProfile,
    pub sigma2: f64,
}

/// Empirical covariance of the eavesdropper's two-phase noise, from `draws`
/// simulated transmissions of the full signal chain with the information
/// symbol removed.
pub fn empirical_eve_covariance(m: &EveDraw, draws: usize, rng: &mut impl Rng) -> CMat {
    let (ch, imp, w) = (m.ch, m.imp, m.w);
    let n = ch.f_r.len();
    let ne = ch.f_e.len();
    // Per-relay output power before transmit distortion, from the receive
    // chain: source and jammer with their transmit distortion, receive
    // distortion proportional to the undistorted input, thermal noise.
    let relay_out: Vec<f64> = (0..n)
        .map(|l| {
            let sig = m.p_s * ch.f_r[l].norm_sqr();
            let jam = m.p_j1 * ch.g_r[l].norm_sqr();
            let rx = sig * (1.0 + imp.k_s_t.powi(2))
                + jam * (1.0 + imp.k_j1_t.powi(2))
                + imp.k_r_r.powi(2) * (sig + jam)
                + m.sigma2;
            w[l].norm_sqr() * rx
        })
        .collect();
    let mut acc = DMatrix::<Complex64>::zeros(2 * ne, 2 * ne);
    let mut y = vec![Complex64::new(0.0, 0.0); 2 * ne];
    let mut t = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..draws {
        let z1 = cn(rng, 1.0);
        let z2 = cn(rng, 1.0);
        let eta_s = cn(rng, imp.k_s_t.powi(2) * m.p_s);
        let eta_j1 = cn(rng, imp.k_j1_t.powi(2) * m.p_j1);
        let eta_j2 = cn(rng, imp.k_j2_t.powi(2) * m.p_j2);
        let src = eta_s;
        let jam1 = m.p_j1.sqrt() * z1 + eta_j1;
        let jam2 = m.p_j2.sqrt() * z2 + eta_j2;
        for l in 0..n {
            let pi = m.p_s * ch.f_r[l].norm_sqr() + m.p_j1 * ch.g_r[l].norm_sqr();
            let r = ch.f_r[l] * src + ch.g_r[l] * jam1 + cn(rng, m.sigma2) + cn(rng, imp.k_r_r.powi(2) * pi);
            t[l] = w[l].conj() * r + cn(rng, imp.k_r_t.powi(2) * relay_out[l]);
        }
        for j in 0..ne {
            y[j] = ch.f_e[j] * src + ch.q_e[j] * jam1 + cn(rng, m.sigma2);
            let mut relayed = Complex64::new(0.0, 0.0);
            for l in 0..n {
                relayed += ch.c_e[(j, l)] * t[l];
            }
            y[ne + j] = relayed + ch.f_e[j] * jam2 + cn(rng, m.sigma2);
        }
        for a in 0..2 * ne {
            for b in 0..2 * ne {
                acc[(a, b)] += y[a] * y[b].conj();
            }
        }
    }
    acc / Complex64::new(draws as f64, 0.0)
}

pub fn frobenius_relative(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}
