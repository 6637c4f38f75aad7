//! Scenario configuration, channel realizations and the seeding contract.
//!
//! Every random draw in the crate flows from a [`RandomState`]. Trial `t` at
//! grid point `g` of a run seeded with `master` uses
//! `RandomState::for_trial(master, g, t)`, whose seed is a SplitMix64 mix of
//! the three inputs, so serial and parallel runs see identical streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat, CVec};

/// Error-vector-magnitude ratios of every transmit and receive chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentProfile {
    pub k_s_t: f64,
    #[serde(rename = "k_J1_t")]
    pub k_j1_t: f64,
    #[serde(rename = "k_J2_t")]
    pub k_j2_t: f64,
    #[serde(rename = "k_D_r")]
    pub k_d_r: f64,
    #[serde(rename = "k_R_r")]
    pub k_r_r: f64,
    #[serde(rename = "k_R_t")]
    pub k_r_t: f64,
}

impl ImpairmentProfile {
    pub fn uniform(k: f64) -> Self {
        Self {
            k_s_t: k,
            k_j1_t: k,
            k_j2_t: k,
            k_d_r: k,
            k_r_r: k,
            k_r_t: k,
        }
    }

    pub fn ideal() -> Self {
        Self::uniform(0.0)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.k_s_t, self.k_j1_t, self.k_j2_t, self.k_d_r, self.k_r_r, self.k_r_t]
    }

    pub fn is_ideal(&self) -> bool {
        self.as_array().iter().all(|&k| k == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for k in self.as_array() {
            if !(0.0..=0.5).contains(&k) {
                return Err(Error::InvalidConfig(format!(
                    "impairment level {k} outside [0, 0.5]"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ImpairmentProfile {
    fn default() -> Self {
        Self::uniform(0.08)
    }
}

/// All scenario constants. Powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile")]
pub struct NetworkConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    pub sigma2: f64,
    #[serde(rename = "Q_tot")]
    pub q_tot: f64,
    #[serde(rename = "P_T")]
    pub p_t: f64,
    #[serde(rename = "P_J1_bar")]
    pub p_j1_bar: f64,
    /// Phase-II source jammer cap. Null-space beamforming sets that jammer to
    /// zero, so the field is carried for completeness only.
    #[serde(rename = "P_J2_bar")]
    pub p_j2_bar: f64,
    #[serde(rename = "Q_l")]
    pub q_l: Vec<f64>,
    pub impairments: ImpairmentProfile,
    #[serde(rename = "delta_I")]
    pub delta_i: f64,
    pub delta_eps: f64,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    #[serde(rename = "M_max")]
    pub m_max: usize,
    pub seed: u64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn default_config() -> NetworkConfig {
    NetworkConfig::with_budget(12, 2, db_to_linear(30.0))
}

impl NetworkConfig {
    /// Default scenario at the given size and total budget, with the derived
    /// caps `P_T = 1.5 Q_tot`, `Q_l = 2 Q_tot / N` and `P_J1_bar = Q_tot`.
    pub fn with_budget(n: usize, n_e: usize, q_tot: f64) -> Self {
        Self {
            n,
            n_e,
            sigma2: 1e-3,
            q_tot,
            p_t: 1.5 * q_tot,
            p_j1_bar: q_tot,
            p_j2_bar: q_tot,
            q_l: vec![2.0 * q_tot / n as f64; n],
            impairments: ImpairmentProfile::default(),
            delta_i: 1e-3,
            delta_eps: 1e-3,
            n_max: 50,
            m_max: 20,
            seed: 0,
        }
    }

    /// Rescale every budget to a new total, keeping the derived ratios.
    pub fn rescaled_budget(&self, q_tot: f64) -> Self {
        let r = q_tot / self.q_tot;
        Self {
            q_tot,
            p_t: self.p_t * r,
            p_j1_bar: self.p_j1_bar * r,
            p_j2_bar: self.p_j2_bar * r,
            q_l: self.q_l.iter().map(|q| q * r).collect(),
            ..self.clone()
        }
    }

    /// Change the relay count, re-deriving per-relay caps as `2 Q_tot / N`.
    pub fn resized(&self, n: usize, n_e: usize) -> Self {
        Self {
            n,
            n_e,
            q_l: vec![2.0 * self.q_tot / n as f64; n],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_e == 0 || self.n <= self.n_e {
            return bad(format!("need N > N_E >= 1, got N={} N_E={}", self.n, self.n_e));
        }
        for (name, x) in [
            ("sigma2", self.sigma2),
            ("Q_tot", self.q_tot),
            ("P_T", self.p_t),
            ("P_J1_bar", self.p_j1_bar),
            ("delta_I", self.delta_i),
            ("delta_eps", self.delta_eps),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return bad(format!("{name} must be finite and positive, got {x}"));
            }
        }
        if !(self.p_j2_bar.is_finite() && self.p_j2_bar >= 0.0) {
            return bad(format!("P_J2_bar must be non-negative, got {}", self.p_j2_bar));
        }
        if self.q_l.len() != self.n {
            return bad(format!("Q_l has {} entries, expected {}", self.q_l.len(), self.n));
        }
        if self.q_l.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            return bad("per-relay caps must be finite and positive".into());
        }
        if self.n_max == 0 || self.m_max == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        self.impairments.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form. Every field is optional; powers may be given in dB with a
/// `_dB` suffix, and a scalar `k` sets all impairments at once.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(rename = "N")]
    n: Option<usize>,
    #[serde(rename = "N_E")]
    n_e: Option<usize>,
    sigma2: Option<f64>,
    #[serde(rename = "sigma2_dB")]
    sigma2_db: Option<f64>,
    #[serde(rename = "Q_tot")]
    q_tot: Option<f64>,
    #[serde(rename = "Q_tot_dB")]
    q_tot_db: Option<f64>,
    #[serde(rename = "P_T")]
    p_t: Option<f64>,
    #[serde(rename = "P_T_dB")]
    p_t_db: Option<f64>,
    #[serde(rename = "P_J1_bar")]
    p_j1_bar: Option<f64>,
    #[serde(rename = "P_J1_bar_dB")]
    p_j1_bar_db: Option<f64>,
    #[serde(rename = "P_J2_bar")]
    p_j2_bar: Option<f64>,
    #[serde(rename = "P_J2_bar_dB")]
    p_j2_bar_db: Option<f64>,
    #[serde(rename = "Q_l")]
    q_l: Option<Vec<f64>>,
    #[serde(rename = "Q_l_dB")]
    q_l_db: Option<Vec<f64>>,
    impairments: Option<ImpairmentProfile>,
    k: Option<f64>,
    #[serde(rename = "delta_I")]
    delta_i: Option<f64>,
    delta_eps: Option<f64>,
    #[serde(rename = "N_max")]
    n_max: Option<usize>,
    #[serde(rename = "M_max")]
    m_max: Option<usize>,
    seed: Option<u64>,
}

fn pick(lin: Option<f64>, db: Option<f64>, name: &str) -> Result<Option<f64>> {
    match (lin, db) {
        (Some(_), Some(_)) => Err(Error::InvalidConfig(format!(
            "both {name} and {name}_dB given"
        ))),
        (Some(x), None) => Ok(Some(x)),
        (None, Some(d)) => Ok(Some(db_to_linear(d))),
        (None, None) => Ok(None),
    }
}

impl TryFrom<ConfigFile> for NetworkConfig {
    type Error = Error;

    fn try_from(f: ConfigFile) -> Result<Self> {
        let n = f.n.unwrap_or(12);
        let n_e = f.n_e.unwrap_or(2);
        let q_tot = pick(f.q_tot, f.q_tot_db, "Q_tot")?.unwrap_or(db_to_linear(30.0));
        let mut cfg = NetworkConfig::with_budget(n, n_e, q_tot);
        if let Some(x) = pick(f.sigma2, f.sigma2_db, "sigma2")? {
            cfg.sigma2 = x;
        }
        if let Some(x) = pick(f.p_t, f.p_t_db, "P_T")? {
            cfg.p_t = x;
        }
        if let Some(x) = pick(f.p_j1_bar, f.p_j1_bar_db, "P_J1_bar")? {
            cfg.p_j1_bar = x;
        }
        if let Some(x) = pick(f.p_j2_bar, f.p_j2_bar_db, "P_J2_bar")? {
            cfg.p_j2_bar = x;
        }
        match (f.q_l, f.q_l_db) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig("both Q_l and Q_l_dB given".into()))
            }
            (Some(q), None) => cfg.q_l = q,
            (None, Some(q)) => cfg.q_l = q.into_iter().map(db_to_linear).collect(),
            (None, None) => {}
        }
        match (f.impairments, f.k) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig("both impairments and k given".into()))
            }
            (Some(p), None) => cfg.impairments = p,
            (None, Some(k)) => cfg.impairments = ImpairmentProfile::uniform(k),
            (None, None) => {}
        }
        cfg.delta_i = f.delta_i.unwrap_or(cfg.delta_i);
        cfg.delta_eps = f.delta_eps.unwrap_or(cfg.delta_eps);
        cfg.n_max = f.n_max.unwrap_or(cfg.n_max);
        cfg.m_max = f.m_max.unwrap_or(cfg.m_max);
        cfg.seed = f.seed.unwrap_or(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at grid point `point` under master seed `master`.
pub fn derive_seed(master: u64, point: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(point)) ^ trial)
}

/// Seedable ChaCha20 stream.
#[derive(Debug, Clone)]
pub struct RandomState {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RandomState {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn for_trial(master: u64, point: u64, trial: u64) -> Self {
        Self::from_seed(derive_seed(master, point, trial))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Circularly-symmetric complex Gaussian with unit variance.
    pub fn complex_normal(&mut self) -> C64 {
        let re: f64 = self.rng.sample(StandardNormal);
        let im: f64 = self.rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn complex_normal_vec(&mut self, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| self.complex_normal())
    }
}

impl RngCore for RandomState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// One block-fading draw of every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Source to relays.
    pub f_r: CVec,
    /// Relays to destination (reciprocal).
    pub g_r: CVec,
    /// Source to eavesdropper.
    pub f_e: CVec,
    /// Destination to eavesdropper.
    pub q_e: CVec,
    /// Relays to eavesdropper, `N_E x N`.
    pub c_e: CMat,
}

impl ChannelRealization {
    pub fn n(&self) -> usize {
        self.f_r.len()
    }

    pub fn n_e(&self) -> usize {
        self.f_e.len()
    }

    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        let (n, ne) = (cfg.n, cfg.n_e);
        let ok = self.f_r.len() == n
            && self.g_r.len() == n
            && self.f_e.len() == ne
            && self.q_e.len() == ne
            && self.c_e.shape() == (ne, n);
        if !ok {
            return Err(Error::Dimension(format!(
                "realization does not match N={n}, N_E={ne}"
            )));
        }
        let finite = |z: &C64| z.re.is_finite() && z.im.is_finite();
        let all = self
            .f_r
            .iter()
            .chain(self.g_r.iter())
            .chain(self.f_e.iter())
            .chain(self.q_e.iter())
            .chain(self.c_e.iter());
        if !all.clone().all(finite) {
            return Err(Error::InvalidArgument("non-finite channel entry".into()));
        }
        Ok(())
    }
}

/// Draw order: `f_R`, `g_R`, `f_E`, `q_E`, then `C_E` column by column.
pub fn generate_realization(cfg: &NetworkConfig, rng: &mut RandomState) -> ChannelRealization {
    let f_r = rng.complex_normal_vec(cfg.n);
    let g_r = rng.complex_normal_vec(cfg.n);
    let f_e = rng.complex_normal_vec(cfg.n_e);
    let q_e = rng.complex_normal_vec(cfg.n_e);
    let c_e = CMat::from_fn(cfg.n_e, cfg.n, |_, _| rng.complex_normal());
    ChannelRealization {
        f_r,
        g_r,
        f_e,
        q_e,
        c_e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = default_config();
        assert_eq!((cfg.n, cfg.n_e), (12, 2));
        assert!((cfg.q_tot - 1000.0).abs() < 1e-9);
        assert!((cfg.q_l[0] - 2000.0 / 12.0).abs() < 1e-9);
        assert!((cfg.p_t - 1500.0).abs() < 1e-9);
        assert_eq!(cfg.impairments, ImpairmentProfile::uniform(0.08));
        assert_eq!(cfg.sigma2, 1e-3);
        assert_eq!((cfg.delta_i, cfg.delta_eps), (1e-3, 1e-3));
        cfg.validate().unwrap();
    }

    #[test]
    fn json_with_db_keys() {
        let cfg = NetworkConfig::from_json_str(r#"{"N": 6, "Q_tot_dB": 20, "k": 0.0}"#).unwrap();
        assert_eq!(cfg.n, 6);
        assert!((cfg.q_tot - 100.0).abs() < 1e-9);
        assert!((cfg.q_l[0] - 200.0 / 6.0).abs() < 1e-9);
        assert!(cfg.impairments.is_ideal());
    }

    #[test]
    fn json_round_trip() {
        let cfg = default_config();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(NetworkConfig::from_json_str(&s).unwrap(), cfg);
    }

    #[test]
    fn json_rejects_conflicts_and_bad_sizes() {
        assert!(NetworkConfig::from_json_str(r#"{"Q_tot": 1, "Q_tot_dB": 0}"#).is_err());
        assert!(NetworkConfig::from_json_str(r#"{"N": 2, "N_E": 2}"#).is_err());
        assert!(NetworkConfig::from_json_str(r#"{"N": 3, "Q_l": [1, 2]}"#).is_err());
        assert!(NetworkConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn realization_is_deterministic_and_sized() {
        let cfg = default_config();
        let a = generate_realization(&cfg, &mut RandomState::from_seed(42));
        let b = generate_realization(&cfg, &mut RandomState::from_seed(42));
        assert_eq!(a, b);
        assert_eq!(a.f_r.len(), 12);
        assert_eq!(a.c_e.shape(), (2, 12));
        a.validate(&cfg).unwrap();
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 0, 1), derive_seed(1, 1, 0));
    }

    #[test]
    fn unit_second_moment() {
        let mut rng = RandomState::from_seed(7);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| rng.complex_normal().norm_sqr()).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 0.02, "{m}");
    }
}
