//! Brute-force reference solver for small instances. For every power pair on
//! a log grid the beamformer direction is the closed-form SINR maximizer and
//! the scale is the largest one meeting the power constraints. Leakage does
//! not depend on `v`, so the best grid pair is the best secrecy rate found.

use serde::Serialize;

use crate::linalg::{quad_form, solve_hpd, CVec};
use crate::rates::RateReport;
use crate::spca::Scenario;

/// Lowest grid power as a fraction of the cap.
pub const GRID_SPAN: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct OraclePoint {
    pub r_s: f64,
    pub p_s: f64,
    pub p_j1: f64,
    #[serde(skip)]
    pub v: CVec,
    #[serde(skip)]
    pub report: Option<RateReport>,
}

/// `grid_points + 1` values `lo (hi/lo)^(k/grid_points)`. Doubling
/// `grid_points` keeps every previous value.
pub fn log_grid(lo: f64, hi: f64, grid_points: usize) -> Vec<f64> {
    if grid_points == 0 {
        return vec![hi];
    }
    (0..=grid_points)
        .map(|k| lo * (hi / lo).powf(k as f64 / grid_points as f64))
        .collect()
}

/// Best beamformer for fixed powers, or `None` if the powers leave no relay
/// budget. Maximizes `P_s |a^H v|² / (v^H Γ v + σ²)` subject to the total
/// budget: at the boundary `σ² = σ² v^H Ῡ v / P_R`, so the optimum direction
/// is `(Γ + σ² Ῡ / P_R)^{-1} a`. Per-relay caps then shrink the scale.
pub fn best_beamformer(scn: &Scenario, p_s: f64, p_j1: f64) -> Option<CVec> {
    let cfg = &scn.cfg;
    let p_r = cfg.q_tot - p_s - p_j1;
    if p_r <= 0.0 {
        return None;
    }
    let ups = scn.proj.ups_bar.at(p_s, p_j1);
    let b = scn.proj.gamma.at(p_s, p_j1) + ups.scale(cfg.sigma2 / p_r);
    let a = scn.signal_direction();
    let dir = solve_hpd(&b, &a)?;
    let scale = boundary_scale(scn, p_s, p_j1, &dir)?;
    Some(dir.scale(scale))
}

/// Largest factor `c` such that `c * dir` meets the total relay budget and
/// every per-relay cap at the given powers. `None` when there is no budget
/// left or `dir` carries no relay power.
pub fn boundary_scale(scn: &Scenario, p_s: f64, p_j1: f64, dir: &CVec) -> Option<f64> {
    let cfg = &scn.cfg;
    let p_r = cfg.q_tot - p_s - p_j1;
    if p_r <= 0.0 {
        return None;
    }
    let mut scale2 = p_r / quad_form(&scn.proj.ups_bar.at(p_s, p_j1), dir);
    for (m, cap) in scn.proj.ups_bar_ll.iter().zip(&cfg.q_l) {
        let p = quad_form(&m.at(p_s, p_j1), dir);
        if p > 0.0 {
            scale2 = scale2.min(cap / p);
        }
    }
    if !(scale2.is_finite() && scale2 > 0.0) {
        return None;
    }
    Some(scale2.sqrt())
}

/// Exhaustive search over `(grid_points + 1)²` power pairs.
pub fn brute_force_oracle(scn: &Scenario, grid_points: usize) -> OraclePoint {
    let cfg = &scn.cfg;
    let ps_grid = log_grid(GRID_SPAN * cfg.p_t, cfg.p_t, grid_points);
    let pj_grid = log_grid(GRID_SPAN * cfg.p_j1_bar, cfg.p_j1_bar, grid_points);
    let mut best = OraclePoint {
        r_s: 0.0,
        p_s: 0.0,
        p_j1: 0.0,
        v: CVec::zeros(scn.d()),
        report: None,
    };
    for &p_s in &ps_grid {
        for &p_j1 in &pj_grid {
            let Some(v) = best_beamformer(scn, p_s, p_j1) else {
                continue;
            };
            let Ok(report) = scn.rate_report(p_s, p_j1, &v) else {
                continue;
            };
            if report.r_s > best.r_s || best.report.is_none() {
                best = OraclePoint { r_s: report.r_s, p_s, p_j1, v, report: Some(report) };
            }
        }
    }
    best
}
