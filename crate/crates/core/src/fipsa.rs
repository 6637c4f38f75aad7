//! Feasible initial point search: drive a common infeasibility slack `s` to
//! zero by iterating the slacked convex program from a random start.

use rand::Rng;
use serde_json::json;

use crate::config::RandomState;
use crate::conic::{self, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::spca::{assemble_subproblem, AdversaryMode, ProgramKind, Scenario, SpcaOptions, SpcaState};

/// Slack values at or below this count as zero.
pub const S_ZERO: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FipsaResult {
    pub state: SpcaState,
    pub s_final: f64,
    /// Exact infeasibility of the random start, then after each iteration.
    pub s_trace: Vec<f64>,
    pub iterations: usize,
    pub feasible: bool,
}

impl FipsaResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "s_final": self.s_final,
            "s_trace": self.s_trace,
            "iterations": self.iterations,
            "feasible": self.feasible,
        })
    }
}

/// Random starting point: `q` uniform in `[2/P, 20/P]`, `v` complex Gaussian
/// scaled so the busiest relay sits at half its cap, slacks evaluated
/// exactly and then moved 10% into the interior.
pub fn random_init(scn: &Scenario, rng: &mut RandomState, mode: AdversaryMode) -> SpcaState {
    let cfg = &scn.cfg;
    let q_s = rng.gen_range(2.0 / cfg.p_t..=20.0 / cfg.p_t);
    let q_j1 = rng.gen_range(2.0 / cfg.p_j1_bar..=20.0 / cfg.p_j1_bar);
    let mut v = rng.complex_normal_vec(scn.d());
    let pr = scn.relay_powers(1.0 / q_s, 1.0 / q_j1, &v);
    let ratio = pr
        .iter()
        .zip(&cfg.q_l)
        .map(|(p, q)| p / q)
        .fold(0.0, f64::max);
    if ratio > 0.0 {
        v = v.unscale((2.0 * ratio).sqrt());
    }
    let mut st = scn.tight_state(q_s, q_j1, &v, mode);
    st.a_s *= 1.1;
    st.a_j1 *= 1.1;
    st.beta *= 1.1;
    st.m_s *= 1.1;
    st.m_j1 *= 0.9;
    st.omega_b *= 0.9;
    st.omega_e = 1.0 + 1.1 * (st.omega_e - 1.0);
    for w in &mut st.omega_r {
        *w = 1.0 + 1.1 * (*w - 1.0);
    }
    let worst = st.omega_r.iter().copied().fold(st.omega_e, f64::max);
    st.t_e = worst.log2() * 1.1;
    let den = st.a_s + st.a_j1 + cfg.sigma2 * st.beta + cfg.sigma2;
    st.t_b = (0.9 * st.omega_b / den).max(crate::spca::T_B_FLOOR);
    st
}

/// Exact infeasibility of a polished point: the largest excess over a power
/// cap or the budget, in watts. Every convexified constraint is tight at a
/// polished point.
pub fn infeasibility(scn: &Scenario, st: &SpcaState) -> f64 {
    let cfg = &scn.cfg;
    let (p_s, p_j1) = (st.p_s(), st.p_j1());
    let pr = scn.relay_powers(p_s, p_j1, &st.v);
    let mut worst = (p_s + p_j1 + pr.iter().sum::<f64>() - cfg.q_tot)
        .max(p_s - cfg.p_t)
        .max(p_j1 - cfg.p_j1_bar);
    for (p, cap) in pr.iter().zip(&cfg.q_l) {
        worst = worst.max(p - cap);
    }
    worst.max(0.0)
}

/// Algorithm 2.
pub fn run_fipsa(scn: &Scenario, rng: &mut RandomState, opts: &SpcaOptions) -> Result<FipsaResult> {
    let cfg = &scn.cfg;
    let mut anchor = random_init(scn, rng, opts.mode);
    let s_init = infeasibility(scn, &anchor);
    let mut s_trace = vec![s_init];
    let mut iterations = 0;
    for i in 0..cfg.m_max {
        let (prog, layout) = assemble_subproblem(scn, &anchor, ProgramKind::Feasibility, opts)?;
        let res = conic::solve(&prog, opts.tol)?;
        iterations += 1;
        // As in SPCA, the backend proposes and the exact polished
        // infeasibility decides.
        let usable = !matches!(res.status, SolveStatus::Infeasible | SolveStatus::Unbounded);
        let (q_s, q_j1, v) = layout.primal(&res.values);
        let finite = q_s > 0.0 && q_j1 > 0.0 && v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        let prev = *s_trace.last().unwrap();
        let proposal = (usable && finite).then(|| scn.tight_state(q_s, q_j1, &v, opts.mode));
        let (next, s) = match proposal.map(|st| {
            let s = infeasibility(scn, &st);
            (st, s)
        }) {
            Some((st, s)) if s <= prev => (st, s),
            _ if res.status != SolveStatus::Optimal && i == 0 => {
                return Err(Error::Iteration { iteration: i, status: res.detail });
            }
            _ => {
                log::debug!("feasibility subproblem {i} ({}) did not reduce s; stopping", res.detail);
                break;
            }
        };
        log::trace!(
            "fipsa iter {i}: P_s={:.4e} P_J1={:.4e} t_B={:.4e} t_E={:.4} s={s:.5} solver_s={:.5}",
            next.p_s(), next.p_j1(), next.t_b, next.t_e, layout.s.map_or(0.0, |x| res.value(x))
        );
        anchor = next;
        s_trace.push(s);
        if s <= S_ZERO {
            break;
        }
        if s_trace.len() >= 2 && (s_trace[s_trace.len() - 2] - s).abs() <= cfg.delta_eps {
            break;
        }
    }
    let s_final = *s_trace.last().unwrap();
    Ok(FipsaResult {
        state: anchor,
        s_final,
        s_trace,
        iterations,
        feasible: s_final <= S_ZERO,
    })
}

/// Grid density of [`power_scale_search`], points per decade.
const SCALE_STEPS_PER_DECADE: usize = 4;
/// Decades below the caps covered by [`power_scale_search`].
const SCALE_DECADES: usize = 7;

/// Largest multiple of `v` meeting the relay caps and the budget at fixed
/// source and jammer powers.
fn scale_to_boundary(scn: &Scenario, p_s: f64, p_j1: f64, v: &CVec) -> Option<CVec> {
    let cfg = &scn.cfg;
    let room = cfg.q_tot - p_s - p_j1;
    let pr = scn.relay_powers(p_s, p_j1, v);
    let total: f64 = pr.iter().sum();
    if room <= 0.0 || total <= 0.0 {
        return None;
    }
    let mut scale2 = room / total;
    for (p, cap) in pr.iter().zip(&cfg.q_l) {
        if *p > 0.0 {
            scale2 = scale2.min(cap / p);
        }
    }
    Some(v.scale(scale2.sqrt() * (1.0 - 1e-12)))
}

/// Re-scales the powers of a feasible point. Keeps the beamformer direction,
/// tries every pair on a log grid below the caps with `v` stretched to the
/// power boundary, and returns the pair with the largest exact `D`. The
/// input point itself is a candidate, so `D` never drops.
pub fn power_scale_search(scn: &Scenario, st: &SpcaState, mode: AdversaryMode) -> SpcaState {
    let cfg = &scn.cfg;
    let n = SCALE_STEPS_PER_DECADE * SCALE_DECADES;
    let lo = 10f64.powi(-(SCALE_DECADES as i32));
    let ps_grid = crate::oracle::log_grid(lo * cfg.p_t, cfg.p_t, n);
    let pj_grid = crate::oracle::log_grid(lo * cfg.p_j1_bar, cfg.p_j1_bar, n);
    let mut best = st.clone();
    for &p_s in &ps_grid {
        for &p_j1 in &pj_grid {
            let Some(v) = scale_to_boundary(scn, p_s, p_j1, &st.v) else {
                continue;
            };
            let cand = scn.tight_state(1.0 / p_s, 1.0 / p_j1, &v, mode);
            if cand.objective() > best.objective() {
                best = cand;
            }
        }
    }
    best
}
