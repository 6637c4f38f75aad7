//! Null-space beamforming basis: relay weights that cancel the relayed signal
//! at the eavesdropper.

use crate::config::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

#[derive(Debug, Clone)]
pub struct NullSpaceBasis {
    /// `C_E F_R`, `N_E x N`.
    pub h: CMat,
    /// Orthonormal columns with `H (H_perp v)^* = 0` for every `v`.
    pub h_perp: CMat,
    pub d: usize,
}

const RANK_TOL: f64 = 1e-10;

/// The constraint `H w^* = 0` is `conj(H) w = 0`, so the basis spans the null
/// space of `conj(H)`, i.e. the orthogonal complement of the column space of
/// `H^T`. That range comes from a thin SVD; the complement is completed by
/// pivoted Gram-Schmidt over the standard basis, which is deterministic.
pub fn build_basis(ch: &ChannelRealization) -> Result<NullSpaceBasis> {
    let (n_e, n) = ch.c_e.shape();
    if n_e >= n {
        return Err(Error::Dimension(format!("need N > N_E, got N={n}, N_E={n_e}")));
    }
    let f = CMat::from_diagonal(&ch.f_r);
    let h = &ch.c_e * f;
    let ht = h.transpose();
    let svd = ht.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * smax)
        .count();
    if rank < n_e {
        return Err(Error::RankDeficient {
            rank,
            expected: n_e,
            found: n - rank,
        });
    }
    let mut basis: Vec<CVec> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > RANK_TOL * smax)
        .map(|k| u.column(k).into_owned())
        .collect();
    let mut used = vec![false; n];
    let mut cols = Vec::with_capacity(n - rank);
    for _ in 0..(n - rank) {
        let mut best: Option<(usize, CVec, f64)> = None;
        for k in (0..n).filter(|&k| !used[k]) {
            let mut e = CVec::zeros(n);
            e[k] = 1.0.into();
            let r = orthogonalize(e, &basis);
            let nr = r.norm();
            if best.as_ref().map_or(true, |b| nr > b.2) {
                best = Some((k, r, nr));
            }
        }
        let (k, r, nr) = best.expect("a candidate column remains");
        used[k] = true;
        let q = r.unscale(nr);
        basis.push(q.clone());
        cols.push(q);
    }
    let h_perp = CMat::from_columns(&cols);
    Ok(NullSpaceBasis {
        h,
        d: n - rank,
        h_perp,
    })
}

/// Two passes of modified Gram-Schmidt.
fn orthogonalize(mut v: CVec, basis: &[CVec]) -> CVec {
    for _ in 0..2 {
        for b in basis {
            let p = b.dotc(&v);
            v -= b * p;
        }
    }
    v
}

pub fn lift(basis: &NullSpaceBasis, v: &CVec) -> Result<CVec> {
    if v.len() != basis.d {
        return Err(Error::Dimension(format!(
            "v has length {}, null space has dimension {}",
            v.len(),
            basis.d
        )));
    }
    Ok(&basis.h_perp * v)
}

/// `||H w^*||`, the relayed signal that reaches the eavesdropper.
pub fn leakage(basis: &NullSpaceBasis, w: &CVec) -> f64 {
    (&basis.h * w.conjugate()).norm()
}
