//! Sequential parametric convex approximation of the joint power allocation
//! and null-space beamforming problem.
//!
//! Decision variables follow the change of variables `q_s = 1/P_s`,
//! `q_J1 = 1/P_J1`, `w = H_perp v`. Each iteration solves one conic program
//! whose nonconvex pieces are replaced by convex inner approximations that
//! are tight at the previous iterate (the anchor), so every iterate stays
//! feasible and the objective never decreases.

use std::f64::consts::LN_2;

use serde::Serialize;
use serde_json::json;

use crate::config::{ChannelRealization, NetworkConfig};
use crate::conic::{self, Affine, ConicProgram, Constraint, SolveStatus, Tolerances, Var};
use crate::distortion::{compute_tau, phi_matrices, project, ProjectedMatrices, TauConstants};
use crate::error::{Error, Result};
use crate::linalg::{c, outer, solve_hpd, C64, CMat, CVec};
use crate::nullspace::{build_basis, leakage, NullSpaceBasis};
use crate::rates::{self, RateReport};

/// Floor applied to the `t_B` anchor before forming the multipliers.
pub const T_B_FLOOR: f64 = 1e-9;
const MULTIPLIER_FLOOR: f64 = 1e-12;

/// `Ξ(x1, x2, λ) = λ x1² / 2 + x2² / (2λ)`, an upper bound on `x1 x2`.
pub fn xi(x1: f64, x2: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("Ξ needs λ > 0, got {lambda}")));
    }
    Ok(0.5 * lambda * x1 * x1 + x2 * x2 / (2.0 * lambda))
}

/// Which adversaries the optimizer accounts for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AdversaryMode {
    /// Only the external eavesdropper enters the surrogate leakage.
    Eve,
    /// The eavesdropper and every relay; `t_E` bounds the worst of them.
    Joint,
}

/// How `log(1 + t_B)` in the objective is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ObjectiveEncoding {
    ExpCone,
    /// Piecewise-linear interpolation through breakpoints that include the
    /// anchor. Lies below the logarithm, so it is an inner approximation.
    SecantCuts,
}

#[derive(Debug, Clone, Copy)]
pub struct SpcaOptions {
    pub mode: AdversaryMode,
    pub encoding: ObjectiveEncoding,
    pub tol: Tolerances,
    /// Check that every anchor is feasible for the program built around it.
    pub check_feasibility: bool,
    /// After each accepted step, try longer steps along the same direction
    /// without a solve and keep the best improving one.
    pub extrapolate: bool,
}

impl Default for SpcaOptions {
    fn default() -> Self {
        Self {
            mode: AdversaryMode::Joint,
            encoding: ObjectiveEncoding::ExpCone,
            tol: Tolerances::default(),
            check_feasibility: true,
            extrapolate: true,
        }
    }
}

/// Everything about one realization that stays fixed across iterations.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: NetworkConfig,
    pub ch: ChannelRealization,
    pub basis: NullSpaceBasis,
    pub tau: TauConstants,
    pub proj: ProjectedMatrices,
    /// `H_perp^H G_R f_R`; the destination signal amplitude is `a^H v`.
    signal: CVec,
    /// Factor of the source-distortion matrix: `||z_rows v||² = v^H Z v`.
    z_rows: Option<CMat>,
    /// Factor of the jammer-residual matrix.
    y_rows: Option<CMat>,
    /// Factor of `Φ_G` projected.
    g_rows: CMat,
    f2: Vec<f64>,
    g2: Vec<f64>,
}

fn nonzero(m: CMat) -> Option<CMat> {
    if m.iter().all(|z| z.norm_sqr() == 0.0) {
        None
    } else {
        Some(m)
    }
}

impl Scenario {
    pub fn new(cfg: &NetworkConfig, ch: &ChannelRealization) -> Result<Self> {
        cfg.validate()?;
        ch.validate(cfg)?;
        let basis = build_basis(ch)?;
        let imp = cfg.impairments;
        let tau = compute_tau(&imp);
        let proj = project(&phi_matrices(ch), &tau, &imp, ch, &basis.h_perp, cfg.sigma2)?;
        let h = &basis.h_perp;
        let d = basis.d;
        let n = cfg.n;
        let signal: CVec = h.adjoint() * ch.g_r.component_mul(&ch.f_r);
        let jam: CVec = h.adjoint() * ch.g_r.component_mul(&ch.g_r);
        let f2: Vec<f64> = ch.f_r.iter().map(|z| z.norm_sqr()).collect();
        let g2: Vec<f64> = ch.g_r.iter().map(|z| z.norm_sqr()).collect();
        let scaled_rows = |w: &dyn Fn(usize) -> f64| CMat::from_fn(n, d, |l, k| h[(l, k)] * w(l));

        let mut z = CMat::zeros(n + 1, d);
        z.rows_mut(0, n)
            .copy_from(&scaled_rows(&|l| (tau.k2 * g2[l] * f2[l]).sqrt()));
        z.row_mut(n).copy_from(&signal.adjoint().scale(imp.k_s_t));
        let mut y = CMat::zeros(n + 1, d);
        y.rows_mut(0, n).copy_from(&scaled_rows(&|l| tau.k1.sqrt() * g2[l]));
        y.row_mut(n).copy_from(&jam.adjoint().scale(imp.k_j1_t));
        let g_rows = scaled_rows(&|l| g2[l].sqrt());

        Ok(Self {
            cfg: cfg.clone(),
            ch: ch.clone(),
            basis,
            tau,
            proj,
            signal,
            z_rows: nonzero(z),
            y_rows: nonzero(y),
            g_rows,
            f2,
            g2,
        })
    }

    pub fn d(&self) -> usize {
        self.basis.d
    }

    pub fn lift(&self, v: &CVec) -> CVec {
        &self.basis.h_perp * v
    }

    /// The vector `a` with `a^H v` the destination signal amplitude.
    pub fn signal_direction(&self) -> CVec {
        self.signal.clone()
    }

    /// `a^H v`, the coherent destination amplitude per unit source amplitude.
    pub fn signal_amplitude(&self, v: &CVec) -> C64 {
        self.signal.dotc(v)
    }

    fn quad(rows: &Option<CMat>, v: &CVec) -> f64 {
        rows.as_ref().map_or(0.0, |r| (r * v).norm_squared())
    }

    /// Per-relay powers `v^H Ῡ^{l,l} v`.
    pub fn relay_powers(&self, p_s: f64, p_j1: f64, v: &CVec) -> Vec<f64> {
        let w = self.lift(v);
        (0..self.cfg.n)
            .map(|l| {
                w[l].norm_sqr()
                    * ((1.0 + self.tau.tau_rs) * self.f2[l] * p_s
                        + self.tau.tau_rj1 * self.g2[l] * p_j1
                        + self.cfg.sigma2)
            })
            .collect()
    }

    /// Eavesdropper SINR with information amplitude squared `ms2`,
    /// source-distortion power `sd` and jammer power `pj`.
    fn eve_sinr(&self, ms2: f64, sd: f64, pj: f64) -> f64 {
        let ch = &self.ch;
        let ne = ch.n_e();
        let imp = &self.cfg.impairments;
        let m = outer(&ch.q_e, &ch.q_e).scale(self.tau.tau_j1 * pj)
            + outer(&ch.f_e, &ch.f_e).scale(imp.k_s_t.powi(2) * sd)
            + CMat::identity(ne, ne).scale(self.cfg.sigma2);
        let x = solve_hpd(&m, &ch.f_e).expect("sigma2 > 0 keeps the matrix definite");
        ms2 * ch.f_e.dotc(&x).re
    }

    fn relay_sinr(&self, l: usize, ms2: f64, sd: f64, pj: f64) -> f64 {
        ms2 * self.f2[l]
            / (self.tau.tau_rj1 * self.g2[l] * pj + self.tau.tau_rs * self.f2[l] * sd + self.cfg.sigma2)
    }

    /// Slack vector evaluated exactly at `(q_s, q_J1, v)`: every defining
    /// inequality holds with equality.
    pub fn tight_state(&self, q_s: f64, q_j1: f64, v: &CVec, mode: AdversaryMode) -> SpcaState {
        let sigma2 = self.cfg.sigma2;
        let amp = self.signal_amplitude(v);
        let omega_b = amp.norm_sqr() / q_s;
        let a_s = Self::quad(&self.z_rows, v) / q_s;
        let a_j1 = Self::quad(&self.y_rows, v) / q_j1;
        let beta = self.tau.k3 * (&self.g_rows * v).norm_squared();
        let t_b = omega_b / (a_s + a_j1 + sigma2 * beta + sigma2);
        let (p_s, p_j) = (1.0 / q_s, 1.0 / q_j1);
        let omega_e = 1.0 + self.eve_sinr(p_s, p_s, p_j);
        let omega_r: Vec<f64> = match mode {
            AdversaryMode::Eve => vec![],
            AdversaryMode::Joint => (0..self.cfg.n)
                .map(|l| 1.0 + self.relay_sinr(l, p_s, p_s, p_j))
                .collect(),
        };
        let worst = omega_r.iter().copied().fold(omega_e, f64::max);
        SpcaState {
            t_b,
            t_e: worst.log2(),
            omega_b,
            omega_e,
            omega_r,
            u: [amp.re, amp.im],
            beta,
            q_j1,
            q_s,
            v: v.clone(),
            a_s,
            a_j1,
            m_s: q_s.powf(-0.5),
            m_j1: 1.0 / q_j1,
        }
    }

    /// True rates at `(P_s, P_J1, v)`, with the eavesdropper evaluated under
    /// null-space beamforming.
    pub fn rate_report(&self, p_s: f64, p_j1: f64, v: &CVec) -> Result<RateReport> {
        let sigma2 = self.cfg.sigma2;
        let imp = &self.cfg.impairments;
        let i_d = rates::rate_destination(p_s, p_j1, v, &self.proj, sigma2)?;
        let i_r = rates::rate_relay_leakage(p_s, p_j1, &self.ch, &self.tau, sigma2);
        let i_e = rates::rate_eve_nsb(p_s, p_j1, &self.ch, imp, &self.tau, sigma2);
        Ok(rates::secrecy_rate(i_d, i_r, i_e))
    }

    /// Moves `(q_s, q_J1, v)` onto the hard power constraints: `q` clamped to
    /// the caps, then `v` shrunk uniformly until the relay caps and the total
    /// budget hold. `None` if the source and jammer alone exhaust the budget.
    pub fn repair(&self, q_s: f64, q_j1: f64, v: &CVec) -> Option<(f64, f64, CVec)> {
        let cfg = &self.cfg;
        if !(q_s > 0.0 && q_j1 > 0.0) || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return None;
        }
        let q_s = q_s.max(1.0 / cfg.p_t);
        let q_j1 = q_j1.max(1.0 / cfg.p_j1_bar);
        let room = cfg.q_tot - 1.0 / q_s - 1.0 / q_j1;
        if room <= 0.0 {
            return None;
        }
        let pr = self.relay_powers(1.0 / q_s, 1.0 / q_j1, v);
        let total: f64 = pr.iter().sum();
        let mut scale2: f64 = if total > room { room / total } else { 1.0 };
        for (p, cap) in pr.iter().zip(&cfg.q_l) {
            if *p > *cap {
                scale2 = scale2.min(cap / p);
            }
        }
        // Land strictly inside so rounding cannot push a cap over.
        let v = if scale2 < 1.0 { v.scale(scale2.sqrt() * (1.0 - 1e-12)) } else { v.clone() };
        Some((q_s, q_j1, v))
    }

    /// Doubling line search along the step `prev -> next`, geometric in the
    /// powers and linear in `v`. Every candidate is repaired and polished,
    /// and the search stops at the first one that does not improve `D`.
    pub fn extrapolate(&self, prev: &SpcaState, next: SpcaState, mode: AdversaryMode) -> SpcaState {
        let mut best = next;
        let base = best.clone();
        let dv = &base.v - &prev.v;
        for alpha in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let q_s = base.q_s * (base.q_s / prev.q_s).powf(alpha);
            let q_j1 = base.q_j1 * (base.q_j1 / prev.q_j1).powf(alpha);
            let v = &base.v + dv.scale(alpha);
            let Some((q_s, q_j1, v)) = self.repair(q_s, q_j1, &v) else {
                break;
            };
            let cand = self.tight_state(q_s, q_j1, &v, mode);
            if cand.objective() > best.objective() {
                best = cand;
            } else {
                break;
            }
        }
        best
    }

    /// Worst relative violation of the hard power constraints.
    pub fn power_violation(&self, p_s: f64, p_j1: f64, v: &CVec) -> f64 {
        let cfg = &self.cfg;
        let pr = self.relay_powers(p_s, p_j1, v);
        let total = p_s + p_j1 + pr.iter().sum::<f64>();
        let mut worst = (total / cfg.q_tot - 1.0).max(0.0);
        for (p, q) in pr.iter().zip(&cfg.q_l) {
            worst = worst.max(p / q - 1.0);
        }
        worst
            .max(p_s / cfg.p_t - 1.0)
            .max(p_j1 / cfg.p_j1_bar - 1.0)
    }
}

/// The slack vector of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcaState {
    pub t_b: f64,
    pub t_e: f64,
    pub omega_b: f64,
    pub omega_e: f64,
    /// One epigraph value per relay in joint mode, empty otherwise.
    pub omega_r: Vec<f64>,
    pub u: [f64; 2],
    pub beta: f64,
    pub q_j1: f64,
    pub q_s: f64,
    pub v: CVec,
    pub a_s: f64,
    pub a_j1: f64,
    pub m_s: f64,
    pub m_j1: f64,
}

impl SpcaState {
    /// `D(t_B, t_E) = ½ log2(1 + t_B) - ½ t_E`.
    pub fn objective(&self) -> f64 {
        0.5 * (1.0 + self.t_b).log2() - 0.5 * self.t_e
    }

    pub fn p_s(&self) -> f64 {
        1.0 / self.q_s
    }

    pub fn p_j1(&self) -> f64 {
        1.0 / self.q_j1
    }

    fn t_b_anchor(&self) -> f64 {
        self.t_b.max(T_B_FLOOR)
    }

    /// `(θ, ρ, γ)` formed from this anchor.
    pub fn multipliers(&self) -> (f64, f64, f64) {
        let t = self.t_b_anchor();
        (
            (self.a_s / t).max(MULTIPLIER_FLOOR),
            (self.a_j1 / t).max(MULTIPLIER_FLOOR),
            (self.beta / t).max(MULTIPLIER_FLOOR),
        )
    }

    pub fn validate_anchor(&self) -> Result<()> {
        let ok = self.q_s > 0.0
            && self.q_j1 > 0.0
            && self.omega_e > 0.0
            && self.omega_r.iter().all(|&w| w > 0.0)
            && self.t_b.is_finite()
            && self.t_b >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "anchor outside the domain (q_s={}, q_J1={}, t_B={}, omega_E={})",
                self.q_s, self.q_j1, self.t_b, self.omega_e
            )))
        }
    }
}

/// Tangent of `log2` at `a`, an upper bound on `log2 ω`.
pub fn log2_tangent(omega: f64, a: f64) -> f64 {
    a.log2() + (omega - a) / (a * LN_2)
}

/// Tangent of `u^T u / q` at `(u_a, q_a)`, a lower bound.
pub fn quad_over_lin_tangent(u: [f64; 2], q: f64, ua: [f64; 2], qa: f64) -> f64 {
    let n2 = ua[0] * ua[0] + ua[1] * ua[1];
    2.0 * (ua[0] * u[0] + ua[1] * u[1]) / qa - n2 * q / (qa * qa)
}

/// Tangent of `1 / q` at `q_a`, a lower bound.
pub fn reciprocal_tangent(q: f64, qa: f64) -> f64 {
    (2.0 - q / qa) / qa
}

/// Variables of an assembled program.
#[derive(Debug, Clone)]
pub struct Layout {
    pub t_b: Var,
    pub t_e: Var,
    pub omega_b: Var,
    pub omega_e: Var,
    pub omega_r: Vec<Var>,
    pub u: [Var; 2],
    pub beta: Var,
    pub q_j1: Var,
    pub q_s: Var,
    pub vr: Vec<Var>,
    pub vi: Vec<Var>,
    pub a_s: Option<Var>,
    pub a_j1: Option<Var>,
    pub m_s: Var,
    pub m_j1: Var,
    pub r: Var,
    pub p_s: Var,
    pub p_j1: Var,
    pub e_s: Vec<Var>,
    pub e_j: Vec<Var>,
    pub e_0: Vec<Var>,
    /// Infeasibility slack, present in feasibility programs only.
    pub s: Option<Var>,
    secant: Option<Vec<f64>>,
}

/// Program flavour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProgramKind {
    /// Maximize `D` subject to the convexified constraints.
    Optimize,
    /// Minimize a common slack `s` added to every convexified constraint and
    /// to the power constraints.
    Feasibility,
}

/// `Σ ρ_k v_k` as (real, imaginary) affine parts.
fn lin_v(row: impl Iterator<Item = C64>, vr: &[Var], vi: &[Var]) -> (Affine, Affine) {
    let (mut re, mut im) = (Affine::default(), Affine::default());
    for (k, z) in row.enumerate() {
        re.add_term(vr[k], z.re);
        re.add_term(vi[k], -z.im);
        im.add_term(vr[k], z.im);
        im.add_term(vi[k], z.re);
    }
    (re.compact(), im.compact())
}

fn factor_exprs(rows: &CMat, vr: &[Var], vi: &[Var]) -> Vec<Affine> {
    let mut out = Vec::new();
    for i in 0..rows.nrows() {
        if rows.row(i).iter().all(|z| z.norm_sqr() == 0.0) {
            continue;
        }
        let (re, im) = lin_v(rows.row(i).iter().copied(), vr, vi);
        out.push(re);
        out.push(im);
    }
    out
}

fn secant_breakpoints(t_a: f64) -> Vec<f64> {
    let t = t_a.max(T_B_FLOOR);
    [0.0, 0.125, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 8.0]
        .iter()
        .map(|k| k * t)
        .collect()
}

/// Builds the convex program around `anchor`.
pub fn assemble_subproblem(
    scn: &Scenario,
    anchor: &SpcaState,
    kind: ProgramKind,
    opts: &SpcaOptions,
) -> Result<(ConicProgram, Layout)> {
    anchor.validate_anchor()?;
    let cfg = &scn.cfg;
    let imp = &cfg.impairments;
    let tau = &scn.tau;
    let sigma2 = cfg.sigma2;
    let n = cfg.n;
    let ne = cfg.n_e;
    let d = scn.d();
    let joint = opts.mode == AdversaryMode::Joint;
    if joint && anchor.omega_r.len() != n {
        return Err(Error::InvalidArgument("joint mode needs one relay epigraph per relay".into()));
    }

    let mut p = ConicProgram::new();
    let t_b = p.var("t_B");
    let t_e = p.var("t_E");
    let omega_b = p.var("omega_B");
    let omega_e = p.var("omega_E");
    let omega_r = if joint { p.vars("omega_R", n) } else { vec![] };
    let u = [p.var("u1"), p.var("u2")];
    let beta = p.var("beta");
    let q_j1 = p.var("q_J1");
    let q_s = p.var("q_s");
    let vr = p.vars("v_re", d);
    let vi = p.vars("v_im", d);
    let a_s = scn.z_rows.as_ref().map(|_| p.var("a_s"));
    let a_j1 = scn.y_rows.as_ref().map(|_| p.var("a_J1"));
    let m_s = p.var("m_s");
    let m_j1 = p.var("m_J1");
    let r = p.var("r");
    let p_s = p.var("p_s");
    let p_j1 = p.var("p_J1");
    let e_s = p.vars("e_s", n);
    let e_j = p.vars("e_J", n);
    let e_0 = p.vars("e_0", n);
    let s = match kind {
        ProgramKind::Feasibility => Some(p.var("s")),
        ProgramKind::Optimize => None,
    };
    // `slack(e)` adds s to an expression that must be nonnegative.
    let slack = |e: Affine| match s {
        Some(s) => e + s,
        None => e,
    };

    // Objective term r <= log(1 + t_B).
    let mut secant = None;
    match opts.encoding {
        ObjectiveEncoding::ExpCone => p.add(
            "objective_log",
            Constraint::Exp { x: r.into(), y: 1.0.into(), z: t_b + 1.0 },
        ),
        ObjectiveEncoding::SecantCuts => {
            let bp = secant_breakpoints(anchor.t_b);
            for (k, w) in bp.windows(2).enumerate() {
                let (x0, x1) = (w[0], w[1]);
                let (y0, y1) = ((1.0 + x0).ln(), (1.0 + x1).ln());
                let slope = (y1 - y0) / (x1 - x0);
                // r <= y0 + slope (t_B - x0)
                p.add(
                    format!("objective_secant[{k}]"),
                    Constraint::NonNeg(Affine::constant(y0 - slope * x0) + t_b * slope - r),
                );
            }
            p.add("objective_range_lo", Constraint::NonNeg(t_b.into()));
            p.add(
                "objective_range_hi",
                Constraint::NonNeg(Affine::constant(*bp.last().unwrap()) - t_b),
            );
            secant = Some(bp);
        }
    }

    match kind {
        ProgramKind::Optimize => p.maximize(r * (0.5 / LN_2) + t_e * -0.5),
        ProgramKind::Feasibility => {
            let s = s.unwrap();
            p.maximize(s * -1.0);
            p.add("s_nonneg", Constraint::NonNeg(s.into()));
        }
    }

    // Leakage epigraphs: log2 ω <= tangent <= t_E.
    let tangent = |omega: Var, a: f64| {
        // t_E - log2 a - (ω - a) / (a ln 2)
        Affine::constant(-a.log2() + 1.0 / LN_2) + t_e + omega * (-1.0 / (a * LN_2))
    };
    p.add("eve_tangent", Constraint::NonNeg(slack(tangent(omega_e, anchor.omega_e))));
    for (l, &w) in omega_r.iter().enumerate() {
        p.add(
            format!("relay_tangent[{l}]"),
            Constraint::NonNeg(slack(tangent(w, anchor.omega_r[l]))),
        );
    }

    // Signal amplitude u = a^H v.
    let (ure, uim) = lin_v(scn.signal.iter().map(|z| z.conj()), &vr, &vi);
    p.add("u_re", Constraint::Zero(ure - u[0]));
    p.add("u_im", Constraint::Zero(uim - u[1]));

    // Bilinear SINR constraint via Ξ:
    // Ξ(t_B, a_s, θ) + Ξ(t_B, a_J1, ρ) + σ² Ξ(t_B, β, γ) <= ω_B - σ² t_B.
    let (theta, rho, gamma) = anchor.multipliers();
    let mut ct = sigma2 * gamma;
    let mut xs: Vec<Affine> = vec![];
    if let Some(a) = a_s {
        ct += theta;
        xs.push(a * (1.0 / (2.0 * theta).sqrt()));
    }
    if let Some(a) = a_j1 {
        ct += rho;
        xs.push(a * (1.0 / (2.0 * rho).sqrt()));
    }
    xs.push(beta * (sigma2 / (2.0 * gamma)).sqrt());
    xs.insert(0, t_b * (0.5 * ct).sqrt());
    p.add(
        "sinr_bilinear",
        Constraint::RotatedSoc {
            y: slack(omega_b + t_b * -sigma2),
            z: 0.5.into(),
            x: xs,
        },
    );

    // ω_B <= tangent of u^T u / q_s.
    {
        let ua = anchor.u;
        let qa = anchor.q_s;
        let n2 = ua[0] * ua[0] + ua[1] * ua[1];
        let tan = u[0] * (2.0 * ua[0] / qa) + u[1] * (2.0 * ua[1] / qa) + q_s * (-n2 / (qa * qa));
        p.add("signal_tangent", Constraint::NonNeg(slack(tan - omega_b)));
    }
    // m_J1 <= tangent of 1 / q_J1.
    {
        let qa = anchor.q_j1;
        let tan = Affine::constant(2.0 / qa) + q_j1 * (-1.0 / (qa * qa));
        p.add("jammer_tangent", Constraint::NonNeg(slack(tan - m_j1)));
    }
    // m_s >= q_s^{-1/2}  <=>  m_s^{2/3} q_s^{1/3} >= 1.
    p.add(
        "ms_power",
        Constraint::Power { x: slack(m_s.into()), y: q_s.into(), z: 1.0.into(), alpha: 2.0 / 3.0 },
    );

    // Quadratic-over-linear terms of the destination denominator.
    if let (Some(a), Some(rows)) = (a_s, &scn.z_rows) {
        p.add(
            "a_s_quad",
            Constraint::RotatedSoc { y: slack(a.into()), z: q_s * 0.5, x: factor_exprs(rows, &vr, &vi) },
        );
    }
    if let (Some(a), Some(rows)) = (a_j1, &scn.y_rows) {
        p.add(
            "a_J1_quad",
            Constraint::RotatedSoc { y: slack(a.into()), z: q_j1 * 0.5, x: factor_exprs(rows, &vr, &vi) },
        );
    }
    {
        let rows = scn.g_rows.scale(tau.k3.sqrt());
        p.add(
            "beta_quad",
            Constraint::RotatedSoc { y: slack(beta.into()), z: 0.5.into(), x: factor_exprs(&rows, &vr, &vi) },
        );
    }

    // Source and jammer caps, 1/q <= P.
    let cap = |p: &mut ConicProgram, label: &str, q: Var, pmax: f64| match s {
        None => p.add(label, Constraint::NonNeg(q + (-1.0 / pmax))),
        Some(s) => p.add(
            label,
            Constraint::RotatedSoc { y: s + pmax, z: q * 0.5, x: vec![1.0.into()] },
        ),
    };
    cap(&mut p, "source_cap", q_s, cfg.p_t);
    cap(&mut p, "jammer_cap", q_j1, cfg.p_j1_bar);

    // Power budget: p >= 1/q and e >= |w_l|^2 / q.
    p.add("source_power", Constraint::RotatedSoc { y: p_s.into(), z: q_s * 0.5, x: vec![1.0.into()] });
    p.add("jammer_power", Constraint::RotatedSoc { y: p_j1.into(), z: q_j1 * 0.5, x: vec![1.0.into()] });
    let h = &scn.basis.h_perp;
    let mut total = Affine::constant(cfg.q_tot) - p_s - p_j1;
    for l in 0..n {
        let (wre, wim) = lin_v(h.row(l).iter().copied(), &vr, &vi);
        let wl = vec![wre, wim];
        p.add(format!("relay_es[{l}]"), Constraint::RotatedSoc { y: e_s[l].into(), z: q_s * 0.5, x: wl.clone() });
        p.add(format!("relay_ej[{l}]"), Constraint::RotatedSoc { y: e_j[l].into(), z: q_j1 * 0.5, x: wl.clone() });
        p.add(format!("relay_e0[{l}]"), Constraint::RotatedSoc { y: e_0[l].into(), z: 0.5.into(), x: wl });
        let cs = (1.0 + tau.tau_rs) * scn.f2[l];
        let cj = tau.tau_rj1 * scn.g2[l];
        let pl = e_s[l] * cs + e_j[l] * cj + e_0[l] * sigma2;
        p.add(format!("relay_power[{l}]"), Constraint::NonNeg(slack(Affine::constant(cfg.q_l[l]) - pl.clone())));
        total = total - pl;
    }
    p.add("total_power", Constraint::NonNeg(slack(total)));

    // Eavesdropper LMI [ϖ, m_s f_E; m_s f_E^H, ω_E - 1] ⪰ 0, with the
    // distortion power m_s² linearized from below about the anchor.
    let msa = anchor.m_s;
    let s_hat = m_s * (2.0 * msa) + (-msa * msa);
    let kst2 = imp.k_s_t.powi(2);
    let ch = &scn.ch;
    let dim = ne + 1;
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for j in 0..dim {
        for i in 0..=j {
            let (er, ei) = if j < ne {
                let qq = ch.q_e[i] * ch.q_e[j].conj() * tau.tau_j1;
                let ff = ch.f_e[i] * ch.f_e[j].conj() * kst2;
                let mut er = m_j1 * qq.re + s_hat.clone() * ff.re;
                let ei = m_j1 * qq.im + s_hat.clone() * ff.im;
                if i == j {
                    er = slack(er + sigma2);
                }
                (er, ei)
            } else if i < ne {
                (m_s * ch.f_e[i].re, m_s * ch.f_e[i].im)
            } else {
                (slack(omega_e - 1.0), Affine::default())
            };
            re.push(er.compact());
            im.push(ei.compact());
        }
    }
    p.add("eve_lmi", Constraint::HermitianPsd { dim, re, im });

    // Relay analogues: (m_s |f_l|)² <= ϖ_l (ω_R,l - 1).
    for (l, &w) in omega_r.iter().enumerate() {
        let varpi = m_j1 * (tau.tau_rj1 * scn.g2[l]) + s_hat.clone() * (tau.tau_rs * scn.f2[l]) + sigma2;
        p.add(
            format!("relay_lmi[{l}]"),
            Constraint::RotatedSoc {
                y: slack(varpi),
                z: slack(w - 1.0) * 0.5,
                x: vec![m_s * scn.f2[l].sqrt()],
            },
        );
    }

    let layout = Layout {
        t_b,
        t_e,
        omega_b,
        omega_e,
        omega_r,
        u,
        beta,
        q_j1,
        q_s,
        vr,
        vi,
        a_s,
        a_j1,
        m_s,
        m_j1,
        r,
        p_s,
        p_j1,
        e_s,
        e_j,
        e_0,
        s,
        secant,
    };
    p.scales = Some(layout.scales(scn, anchor));
    Ok((p, layout))
}

impl Layout {
    /// Program point corresponding to `state`, with auxiliary variables set
    /// tight and the slack `s` (if any) set to `s_value`.
    pub fn point(&self, scn: &Scenario, state: &SpcaState, s_value: f64) -> Vec<f64> {
        let n_vars = self.s.map_or(self.e_0.last().unwrap().0 + 1, |s| s.0 + 1);
        let mut x = vec![0.0; n_vars];
        let mut set = |v: Var, val: f64| x[v.0] = val;
        set(self.t_b, state.t_b);
        set(self.t_e, state.t_e);
        set(self.omega_b, state.omega_b);
        set(self.omega_e, state.omega_e);
        for (v, &w) in self.omega_r.iter().zip(&state.omega_r) {
            set(*v, w);
        }
        set(self.u[0], state.u[0]);
        set(self.u[1], state.u[1]);
        set(self.beta, state.beta);
        set(self.q_j1, state.q_j1);
        set(self.q_s, state.q_s);
        for k in 0..state.v.len() {
            set(self.vr[k], state.v[k].re);
            set(self.vi[k], state.v[k].im);
        }
        if let Some(a) = self.a_s {
            set(a, state.a_s);
        }
        if let Some(a) = self.a_j1 {
            set(a, state.a_j1);
        }
        set(self.m_s, state.m_s);
        set(self.m_j1, state.m_j1);
        let r = match &self.secant {
            None => (1.0 + state.t_b).ln(),
            Some(bp) => secant_value(bp, state.t_b),
        };
        set(self.r, r);
        set(self.p_s, 1.0 / state.q_s);
        set(self.p_j1, 1.0 / state.q_j1);
        let w = scn.lift(&state.v);
        for l in 0..w.len() {
            let w2 = w[l].norm_sqr();
            set(self.e_s[l], w2 / state.q_s);
            set(self.e_j[l], w2 / state.q_j1);
            set(self.e_0[l], w2);
        }
        if let Some(s) = self.s {
            set(s, s_value);
        }
        x
    }

    /// Per-variable magnitudes taken from the anchor, for backend scaling.
    /// The beamformer entries share one scale.
    fn scales(&self, scn: &Scenario, anchor: &SpcaState) -> Vec<f64> {
        let x = self.point(scn, anchor, 1.0);
        let mut out: Vec<f64> = x.iter().map(|v| if v.abs() > 1e-6 { v.abs() } else { 1.0 }).collect();
        let d = anchor.v.len().max(1);
        let rms = anchor.v.norm() / (d as f64).sqrt();
        let v_scale = if rms > 1e-6 { rms } else { 1.0 };
        for k in self.vr.iter().chain(&self.vi) {
            out[k.0] = v_scale;
        }
        out
    }

    /// `(q_s, q_J1, v)` read back from a solution.
    pub fn primal(&self, x: &[f64]) -> (f64, f64, CVec) {
        let v = CVec::from_iterator(self.vr.len(), self.vr.iter().zip(&self.vi).map(|(a, b)| c(x[a.0], x[b.0])));
        (x[self.q_s.0], x[self.q_j1.0], v)
    }
}

fn secant_value(bp: &[f64], t: f64) -> f64 {
    let mut best = f64::INFINITY;
    for w in bp.windows(2) {
        let (y0, y1) = ((1.0 + w[0]).ln(), (1.0 + w[1]).ln());
        best = best.min(y0 + (y1 - y0) / (w[1] - w[0]) * (t - w[0]));
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Termination {
    /// `|ΔD| <= δ_I`.
    Converged,
    /// The polished iterate did not improve on the anchor; the anchor is kept.
    NoImprovement,
    IterationCap,
    /// The backend failed after at least one accepted step; the best iterate
    /// so far is returned.
    BackendFailure { iteration: usize, status: String },
}

#[derive(Debug, Clone)]
pub struct BeamformerSolution {
    pub p_s: f64,
    pub p_j1: f64,
    pub v: CVec,
    pub w: CVec,
    pub r_s_surrogate: f64,
    pub r_s_true: RateReport,
    pub iterations: usize,
    /// `D` at the initial point followed by one value per accepted step.
    pub objective_trace: Vec<f64>,
    pub solve_times: Vec<f64>,
    /// Largest successive-feasibility residual seen across iterations.
    pub max_anchor_residual: f64,
    pub converged: bool,
    pub termination: Termination,
    pub state: SpcaState,
}

pub(crate) fn cvec_json(v: &CVec) -> serde_json::Value {
    json!(v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
}

impl BeamformerSolution {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "P_s": self.p_s,
            "P_J1": self.p_j1,
            "v": cvec_json(&self.v),
            "w": cvec_json(&self.w),
            "R_s_surrogate": self.r_s_surrogate,
            "R_s_true": self.r_s_true,
            "iterations": self.iterations,
            "objective_trace": self.objective_trace,
            "solve_times": self.solve_times,
            "converged": self.converged,
            "termination": self.termination,
        })
    }
}

/// Residual of `state` in the program anchored at itself.
pub fn anchor_residual(scn: &Scenario, state: &SpcaState, kind: ProgramKind, s: f64, opts: &SpcaOptions) -> Result<f64> {
    let (prog, layout) = assemble_subproblem(scn, state, kind, opts)?;
    Ok(prog.residual(&layout.point(scn, state, s)))
}

/// Feasibility tolerance for anchors handed to the first subproblem.
pub const INIT_TOL: f64 = 1e-7;

/// SPCA: iterate the convexified program from a feasible `init`.
pub fn run_algorithm1(scn: &Scenario, init: &SpcaState, opts: &SpcaOptions) -> Result<BeamformerSolution> {
    let cfg = &scn.cfg;
    let mut anchor = scn.tight_state(init.q_s, init.q_j1, &init.v, opts.mode);
    let init_res = anchor_residual(scn, &anchor, ProgramKind::Optimize, 0.0, opts)?;
    let init_power = scn.power_violation(anchor.p_s(), anchor.p_j1(), &anchor.v);
    if init_res > INIT_TOL || init_power > 1e-6 {
        return Err(Error::InfeasibleInit { residual: init_res.max(init_power) });
    }
    let mut trace = vec![anchor.objective()];
    let mut times = vec![];
    let mut max_res = init_res;
    let mut termination = Termination::IterationCap;
    let mut iterations = 0;
    for i in 0..cfg.n_max {
        let (prog, layout) = assemble_subproblem(scn, &anchor, ProgramKind::Optimize, opts)?;
        if opts.check_feasibility && i > 0 {
            max_res = max_res.max(prog.residual(&layout.point(scn, &anchor, 0.0)));
        }
        let res = conic::solve(&prog, opts.tol)?;
        iterations += 1;
        times.push(res.solve_time);
        // The backend only proposes a step: any returned point is polished,
        // repaired onto the power constraints and kept only if D does not drop.
        let usable = !matches!(res.status, SolveStatus::Infeasible | SolveStatus::Unbounded);
        let (q_s, q_j1, v) = layout.primal(&res.values);
        let next = if usable { scn.repair(q_s, q_j1, &v) } else { None }
            .map(|(q_s, q_j1, v)| scn.tight_state(q_s, q_j1, &v, opts.mode));
        let d_old = *trace.last().unwrap();
        let next = match next {
            Some(st) if st.objective() >= d_old => st,
            _ if res.status != SolveStatus::Optimal => {
                if i == 0 {
                    return Err(Error::Iteration { iteration: i, status: res.detail });
                }
                log::warn!("subproblem {i} returned {}; keeping the previous iterate", res.detail);
                termination = Termination::BackendFailure { iteration: i, status: res.detail };
                break;
            }
            _ => {
                termination = Termination::NoImprovement;
                break;
            }
        };
        if res.status != SolveStatus::Optimal {
            log::debug!("subproblem {i} returned {}; its polished point still improves D", res.detail);
        }
        log::trace!(
            "spca iter {i}: P_s={:.4e} P_J1={:.4e} t_B={:.4e} t_E={:.4} D={:.5}",
            next.p_s(), next.p_j1(), next.t_b, next.t_e, next.objective()
        );
        let next = if opts.extrapolate { scn.extrapolate(&anchor, next, opts.mode) } else { next };
        let d_new = next.objective();
        anchor = next;
        trace.push(d_new);
        if (d_new - d_old).abs() <= cfg.delta_i {
            termination = Termination::Converged;
            break;
        }
    }
    let p_s = anchor.p_s();
    let p_j1 = anchor.p_j1();
    let w = scn.lift(&anchor.v);
    let leak = leakage(&scn.basis, &w);
    debug_assert!(leak <= 1e-10 * w.norm().max(1e-300) || w.norm() == 0.0);
    let report = scn.rate_report(p_s, p_j1, &anchor.v)?;
    let surrogate = anchor.objective();
    log::debug!(
        "spca: {} iterations, D = {surrogate:.6}, R_s = {:.6}, gap = {:.3e}",
        iterations,
        report.r_s,
        report.r_s - surrogate
    );
    Ok(BeamformerSolution {
        p_s,
        p_j1,
        v: anchor.v.clone(),
        w,
        r_s_surrogate: surrogate,
        r_s_true: report,
        iterations,
        objective_trace: trace,
        solve_times: times,
        max_anchor_residual: max_res,
        converged: matches!(termination, Termination::Converged | Termination::NoImprovement),
        termination,
        state: anchor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, generate_realization, RandomState};
    use crate::linalg::quad_form;

    #[test]
    fn xi_examples() {
        assert_eq!(xi(2.0, 3.0, 1.5).unwrap(), 6.0);
        assert_eq!(xi(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(xi(2.0, 3.0, 1.0).unwrap(), 6.5);
        assert!(xi(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn tangents_are_tight_and_bounding() {
        assert!((log2_tangent(3.0, 3.0) - 3f64.log2()).abs() < 1e-15);
        assert!((quad_over_lin_tangent([1.0, 2.0], 0.5, [1.0, 2.0], 0.5) - 10.0).abs() < 1e-12);
        let mut rng = RandomState::from_seed(1);
        use rand::Rng;
        for _ in 0..10_000 {
            let qa: f64 = rng.gen_range(1e-3..10.0);
            let q: f64 = rng.gen_range(1e-3..10.0);
            assert!(reciprocal_tangent(q, qa) <= 1.0 / q + 1e-12);
        }
    }

    #[test]
    fn tight_state_matches_rates() {
        let cfg = default_config();
        let mut rng = RandomState::from_seed(21);
        let ch = generate_realization(&cfg, &mut rng);
        let scn = Scenario::new(&cfg, &ch).unwrap();
        let v = rng.complex_normal_vec(scn.d()).scale(0.05);
        let st = scn.tight_state(1.0 / 200.0, 1.0 / 100.0, &v, AdversaryMode::Joint);
        let rep = scn.rate_report(200.0, 100.0, &v).unwrap();
        let d = rep.i_d - rep.max_leakage();
        assert!((st.objective() - d).abs() < 1e-9);
        // Factored quadratic forms equal the projected matrices.
        let g = scn.proj.gamma.at(200.0, 100.0);
        let den = st.a_s + st.a_j1 + cfg.sigma2 * st.beta;
        assert!((den - quad_form(&g, &v)).abs() < 1e-9 * den);
    }
}
