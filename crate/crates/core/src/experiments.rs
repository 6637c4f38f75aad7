//! Monte Carlo harness: the end-to-end solve of one realization, parameter
//! sweeps aggregated into CSV rows, the small-instance oracle comparison and
//! the solver-versus-surrogate timing table.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{db_to_linear, derive_seed, generate_realization, ImpairmentProfile, NetworkConfig, RandomState};
use crate::dnn::SurrogateModel;
use crate::error::{Error, Result};
use crate::fipsa::{power_scale_search, run_fipsa, FipsaResult};
use crate::oracle::brute_force_oracle;
use crate::parallel::{par_map, Execution};
use crate::spca::{run_algorithm1, BeamformerSolution, Scenario, SpcaOptions};

pub const FORMAT_VERSION: u32 = 1;

/// One realization taken through the whole pipeline.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub scenario: Scenario,
    /// `None` when FIPSA itself failed.
    pub fipsa: Option<FipsaResult>,
    pub solution: Option<BeamformerSolution>,
    /// FIPSA, power-scale search and SPCA together.
    pub time_s: f64,
    pub error: Option<String>,
}

/// Draws the realization from `seed`, then runs FIPSA, the power-scale
/// search and SPCA. Solver failures are recorded in the instance; only an
/// unusable scenario is an error.
pub fn solve_instance(cfg: &NetworkConfig, seed: u64, opts: &SpcaOptions) -> Result<Instance> {
    let mut rng = RandomState::from_seed(seed);
    let ch = generate_realization(cfg, &mut rng);
    let scenario = Scenario::new(cfg, &ch)?;
    let start = Instant::now();
    let fipsa = match run_fipsa(&scenario, &mut rng, opts) {
        Ok(f) => f,
        Err(e) => {
            return Ok(Instance {
                seed,
                fipsa: None,
                scenario,
                solution: None,
                time_s: start.elapsed().as_secs_f64(),
                error: Some(e.to_string()),
            })
        }
    };
    let (solution, error) = if fipsa.feasible {
        let init = power_scale_search(&scenario, &fipsa.state, opts.mode);
        match run_algorithm1(&scenario, &init, opts) {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    if let Some(e) = &error {
        log::warn!("seed {seed}: {e}");
    }
    Ok(Instance {
        seed,
        scenario,
        fipsa: Some(fipsa),
        solution,
        time_s: start.elapsed().as_secs_f64(),
        error,
    })
}

/// Per-trial outcome, enough to recompute every sweep statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub value: f64,
    pub feasible: bool,
    pub solved: bool,
    #[serde(rename = "R_s")]
    pub r_s: f64,
    #[serde(rename = "P_s")]
    pub p_s: f64,
    #[serde(rename = "P_J1")]
    pub p_j1: f64,
    pub iters_fipsa: usize,
    pub iters_spca: usize,
    pub converged: bool,
    pub time_s: f64,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn from_instance(value: f64, inst: &Instance) -> Self {
        let sol = inst.solution.as_ref();
        Self {
            seed: inst.seed,
            value,
            feasible: inst.fipsa.as_ref().is_some_and(|f| f.feasible),
            solved: sol.is_some(),
            r_s: sol.map_or(0.0, |s| s.r_s_true.r_s),
            p_s: sol.map_or(0.0, |s| s.p_s),
            p_j1: sol.map_or(0.0, |s| s.p_j1),
            iters_fipsa: inst.fipsa.as_ref().map_or(0, |f| f.iterations),
            iters_spca: sol.map_or(0, |s| s.iterations),
            converged: sol.is_some_and(|s| s.converged),
            time_s: inst.time_s,
            error: inst.error.clone(),
        }
    }

    fn failed(seed: u64, value: f64, err: &Error) -> Self {
        Self {
            seed,
            value,
            feasible: false,
            solved: false,
            r_s: 0.0,
            p_s: 0.0,
            p_j1: 0.0,
            iters_fipsa: 0,
            iters_spca: 0,
            converged: false,
            time_s: 0.0,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    /// Total budget in dB; the caps follow their default ratios.
    #[serde(rename = "Q_tot_dB")]
    QTotDb,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "N_E")]
    NE,
    /// Split of the relay impairment between receive and transmit chains.
    #[serde(rename = "alpha")]
    ImpairmentSplit,
    /// Common level of all six impairments.
    #[serde(rename = "k")]
    ImpairmentLevel,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::QTotDb => "Q_tot_dB",
            SweepParam::N => "N",
            SweepParam::NE => "N_E",
            SweepParam::ImpairmentSplit => "alpha",
            SweepParam::ImpairmentLevel => "k",
        }
    }
}

/// How `alpha` divides the relay impairment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitForm {
    /// `k_R_t = alpha`, `k_R_r = 0.2 (1 - alpha)`.
    #[default]
    Caption,
    /// A total of 0.2 divided between the chains: `k_R_r = 0.2 alpha`,
    /// `k_R_t = 0.2 (1 - alpha)`.
    Body,
}

/// Source and destination impairment used by the split sweep.
pub const SPLIT_ENDPOINT_K: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub trials: usize,
    #[serde(default = "crate::config::default_config")]
    pub base: NetworkConfig,
    #[serde(default)]
    pub split_form: SplitForm,
    /// Master seed; trial `t` at grid point `g` uses `derive_seed(seed, g, t)`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

impl SweepSpec {
    pub fn new(param: SweepParam, grid: Vec<f64>, trials: usize, base: NetworkConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            param,
            grid,
            trials,
            seed: base.seed,
            base,
            split_form: SplitForm::Caption,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "sweep format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("sweep needs at least one trial per point".into()));
        }
        for &v in &self.grid {
            self.config_at(v)?.validate()?;
        }
        Ok(())
    }

    /// The scenario at one grid value.
    pub fn config_at(&self, value: f64) -> Result<NetworkConfig> {
        let b = &self.base;
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a positive integer, got {v}", self.param.name())))
            }
        };
        Ok(match self.param {
            SweepParam::QTotDb => b.rescaled_budget(db_to_linear(value)),
            SweepParam::N => b.resized(count(value)?, b.n_e),
            SweepParam::NE => b.resized(b.n, count(value)?),
            SweepParam::ImpairmentLevel => NetworkConfig { impairments: ImpairmentProfile::uniform(value), ..b.clone() },
            SweepParam::ImpairmentSplit => {
                let mut imp = ImpairmentProfile { k_s_t: SPLIT_ENDPOINT_K, k_d_r: SPLIT_ENDPOINT_K, ..b.impairments };
                match self.split_form {
                    SplitForm::Caption => {
                        imp.k_r_t = value;
                        imp.k_r_r = 0.2 * (1.0 - value);
                    }
                    SplitForm::Body => {
                        imp.k_r_r = 0.2 * value;
                        imp.k_r_t = 0.2 * (1.0 - value);
                    }
                }
                NetworkConfig { impairments: imp, ..b.clone() }
            }
        })
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    #[serde(rename = "mean_Rs")]
    pub mean_rs: f64,
    #[serde(rename = "std_Rs")]
    pub std_rs: f64,
    #[serde(rename = "mean_Ps")]
    pub mean_ps: f64,
    #[serde(rename = "mean_PJ1")]
    pub mean_pj1: f64,
    pub feas_frac: f64,
    pub mean_iters_fipsa: f64,
    pub mean_iters_spca: f64,
    pub mean_time_s: f64,
    pub trials: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Statistics over the records of one grid point. Rate and power means and
/// the SPCA iteration mean use solved trials only; the feasibility fraction,
/// FIPSA iterations and time use every trial. `std_Rs` is the sample
/// standard deviation.
pub fn aggregate(param: SweepParam, value: f64, records: &[TrialRecord]) -> SweepRow {
    let solved: Vec<&TrialRecord> = records.iter().filter(|r| r.solved).collect();
    let mean_rs = mean(solved.iter().map(|r| r.r_s));
    let std_rs = if solved.len() > 1 {
        let ss: f64 = solved.iter().map(|r| (r.r_s - mean_rs).powi(2)).sum();
        (ss / (solved.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    SweepRow {
        param: param.name().into(),
        value,
        mean_rs,
        std_rs,
        mean_ps: mean(solved.iter().map(|r| r.p_s)),
        mean_pj1: mean(solved.iter().map(|r| r.p_j1)),
        feas_frac: records.iter().filter(|r| r.feasible).count() as f64 / records.len().max(1) as f64,
        mean_iters_fipsa: mean(records.iter().map(|r| r.iters_fipsa as f64)),
        mean_iters_spca: mean(solved.iter().map(|r| r.iters_spca as f64)),
        mean_time_s: mean(records.iter().map(|r| r.time_s)),
        trials: records.len(),
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Grouped by grid point, in trial order.
    pub records: Vec<Vec<TrialRecord>>,
}

pub fn run_sweep(spec: &SweepSpec, opts: &SpcaOptions, exec: Execution) -> Result<SweepOutcome> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len())
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();
    let cfgs: Vec<NetworkConfig> = spec.grid.iter().map(|&v| spec.config_at(v)).collect::<Result<_>>()?;
    let flat = par_map(&jobs, exec, |_, &(g, t)| {
        let seed = derive_seed(spec.seed, g as u64, t as u64);
        let value = spec.grid[g];
        match solve_instance(&cfgs[g], seed, opts) {
            Ok(inst) => TrialRecord::from_instance(value, &inst),
            Err(e) => {
                log::warn!("{}={value} trial {t}: {e}", spec.param.name());
                TrialRecord::failed(seed, value, &e)
            }
        }
    });
    let mut records: Vec<Vec<TrialRecord>> = vec![Vec::with_capacity(spec.trials); spec.grid.len()];
    for ((g, _), r) in jobs.iter().zip(flat) {
        records[*g].push(r);
    }
    let rows = spec
        .grid
        .iter()
        .zip(&records)
        .map(|(&v, rs)| aggregate(spec.param, v, rs))
        .collect();
    Ok(SweepOutcome { rows, records })
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Writes one JSON record per line.
pub fn write_records(records: &[TrialRecord], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// SPCA against the brute-force oracle on one realization.
#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub seed: u64,
    #[serde(rename = "R_s_spca")]
    pub r_s_spca: f64,
    #[serde(rename = "R_s_oracle")]
    pub r_s_oracle: f64,
    pub solved: bool,
}

pub fn compare_oracle(cfg: &NetworkConfig, trials: usize, grid_points: usize, opts: &SpcaOptions, exec: Execution) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    let idx: Vec<usize> = (0..trials).collect();
    par_map(&idx, exec, |_, &t| {
        let seed = derive_seed(cfg.seed, 0, t as u64);
        let inst = solve_instance(cfg, seed, opts)?;
        let oracle = brute_force_oracle(&inst.scenario, grid_points);
        Ok(OracleRow {
            seed,
            r_s_spca: inst.solution.as_ref().map_or(0.0, |s| s.r_s_true.r_s),
            r_s_oracle: oracle.r_s,
            solved: inst.solution.is_some(),
        })
    })
    .into_iter()
    .collect()
}

/// Mean wall time per solve at one network size.
#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    pub spca_time_s: f64,
    pub surrogate_time_s: f64,
    pub ratio: f64,
    pub trials: usize,
}

/// Times the full solver pipeline and the surrogate inference (features,
/// forward pass, projection and rate evaluation) on the same realizations.
/// Runs sequentially so the two timings are comparable.
pub fn bench_timing(entries: &[(NetworkConfig, SurrogateModel)], trials: usize, opts: &SpcaOptions) -> Result<Vec<TimingRow>> {
    let mut out = vec![];
    for (cfg, model) in entries {
        cfg.validate()?;
        if model.input_dim() != crate::dnn::feature_dim(cfg.n, cfg.n_e) {
            return Err(Error::Dimension(format!(
                "model expects {} features, N={} N_E={} gives {}",
                model.input_dim(),
                cfg.n,
                cfg.n_e,
                crate::dnn::feature_dim(cfg.n, cfg.n_e)
            )));
        }
        let (mut t_spca, mut t_dnn) = (0.0, 0.0);
        for t in 0..trials {
            let seed = derive_seed(cfg.seed, cfg.n as u64, t as u64);
            let inst = solve_instance(cfg, seed, opts)?;
            t_spca += inst.time_s;
            let start = Instant::now();
            let pred = crate::dnn::infer(model, cfg, &inst.scenario.ch)?;
            std::hint::black_box(&pred);
            t_dnn += start.elapsed().as_secs_f64();
        }
        let spca_time_s = t_spca / trials as f64;
        let surrogate_time_s = t_dnn / trials as f64;
        out.push(TimingRow {
            n: cfg.n,
            n_e: cfg.n_e,
            spca_time_s,
            surrogate_time_s,
            ratio: spca_time_s / surrogate_time_s,
            trials,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    #[test]
    fn split_forms() {
        let mut spec = SweepSpec::new(SweepParam::ImpairmentSplit, vec![0.25], 1, default_config());
        let c = spec.config_at(0.25).unwrap().impairments;
        assert!((c.k_r_t - 0.25).abs() < 1e-15 && (c.k_r_r - 0.15).abs() < 1e-15);
        assert_eq!(c.k_s_t, SPLIT_ENDPOINT_K);
        spec.split_form = SplitForm::Body;
        let c = spec.config_at(0.25).unwrap().impairments;
        assert!((c.k_r_r - 0.05).abs() < 1e-15 && (c.k_r_t - 0.15).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        let spec = SweepSpec::new(SweepParam::N, vec![], 1, default_config());
        assert!(spec.validate().is_err());
        let spec = SweepSpec::new(SweepParam::N, vec![6.5], 1, default_config());
        assert!(spec.validate().is_err());
        let spec = SweepSpec::new(SweepParam::NE, vec![12.0], 1, default_config());
        assert!(spec.validate().is_err());
        let spec = SweepSpec::new(SweepParam::QTotDb, vec![20.0, 30.0], 0, default_config());
        assert!(spec.validate().is_err());
    }

    #[test]
    fn aggregate_statistics() {
        let rec = |r_s: f64, solved: bool| TrialRecord {
            seed: 0,
            value: 1.0,
            feasible: solved,
            solved,
            r_s,
            p_s: 2.0 * r_s,
            p_j1: 1.0,
            iters_fipsa: 1,
            iters_spca: 4,
            converged: solved,
            time_s: 0.5,
            error: None,
        };
        let row = aggregate(SweepParam::N, 6.0, &[rec(1.0, true), rec(3.0, true), rec(0.0, false)]);
        assert_eq!(row.mean_rs, 2.0);
        assert!((row.std_rs - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(row.mean_ps, 4.0);
        assert!((row.feas_frac - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(row.trials, 3);
    }
}
