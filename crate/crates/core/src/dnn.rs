//! Learned surrogate for the solver: SPCA-labelled datasets, feature
//! standardization, a ReLU multilayer perceptron trained with Adam and
//! dropout, projected inference and the complexity estimators.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, generate_realization, linear_to_db, ChannelRealization, NetworkConfig, RandomState};
use crate::error::{Error, Result};
use crate::experiments::solve_instance;
use crate::linalg::{c, CVec};
use crate::oracle::{best_beamformer, boundary_scale};
use crate::parallel::{par_map, Execution};
use crate::spca::{Scenario, SpcaOptions};

pub const FORMAT_VERSION: u32 = 1;
pub const HIDDEN: [usize; 3] = [256, 256, 128];
/// `N_E, N`, six impairment levels, `Q_tot`, `P_T` and the mean `Q_l`.
pub const SCALAR_FEATURES: usize = 11;
/// Standard deviations below this are floored during standardization.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Redraws allowed per dataset sample before giving up.
pub const MAX_REDRAWS: usize = 20;
/// Target encoding written into model files.
pub const TARGETS: &str = "rs_log10ps_log10pj1_unitw";
/// Predicted powers are kept above this fraction of their caps.
pub const MIN_POWER_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEncoding {
    /// Real and imaginary part of every channel entry.
    #[default]
    Lossless,
    /// Channel magnitudes and five scalars; matches the dimension count of
    /// the reference architecture but discards phase.
    Magnitude,
}

pub fn feature_dim(n: usize, n_e: usize) -> usize {
    2 * (2 * n + 2 * n_e + n_e * n) + SCALAR_FEATURES
}

/// Input and output sizes of the published architecture.
pub fn magnitude_dims(n: usize, n_e: usize) -> (usize, usize) {
    (2 * (n + n_e) + n_e * n + 5, n + 3)
}

/// `R_s, P_s, P_J1` and interleaved real/imaginary parts of the relay
/// weights `w`. The weights are labelled rather than the null-space
/// coordinates `v` because the basis is an arbitrary function of the
/// channel, so `v` is not a well-defined target.
pub fn label_dim(n: usize) -> usize {
    3 + 2 * n
}

/// Channel entries in the order `Vec(C_E), f_R, g_R, f_E, q_E`.
fn channel_entries(ch: &ChannelRealization) -> impl Iterator<Item = &crate::linalg::C64> {
    ch.c_e.iter().chain(ch.f_r.iter()).chain(ch.g_r.iter()).chain(ch.f_e.iter()).chain(ch.q_e.iter())
}

pub fn features(cfg: &NetworkConfig, ch: &ChannelRealization, enc: FeatureEncoding) -> Vec<f64> {
    let k = cfg.impairments.as_array();
    let q_l_mean = cfg.q_l.iter().sum::<f64>() / cfg.q_l.len().max(1) as f64;
    match enc {
        FeatureEncoding::Lossless => {
            let mut out: Vec<f64> = channel_entries(ch).flat_map(|z| [z.re, z.im]).collect();
            out.extend([cfg.n_e as f64, cfg.n as f64]);
            out.extend(k);
            out.extend([linear_to_db(cfg.q_tot), linear_to_db(cfg.p_t), linear_to_db(q_l_mean)]);
            out
        }
        FeatureEncoding::Magnitude => {
            let mut out: Vec<f64> = channel_entries(ch).map(|z| z.norm()).collect();
            out.extend([cfg.n_e as f64, cfg.n as f64, k.iter().sum::<f64>() / 6.0]);
            out.extend([linear_to_db(cfg.q_tot), linear_to_db(cfg.p_t)]);
            out
        }
    }
}

/// `v` rotated so the destination amplitude `a^H v` is real and positive.
/// Every rate is invariant to a common phase, so this only removes an
/// ambiguity from the labels.
pub fn canonical_phase(scn: &Scenario, v: &CVec) -> CVec {
    let amp = scn.signal_amplitude(v);
    if amp.norm() == 0.0 {
        return v.clone();
    }
    v * (amp.conj() / amp.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    pub index: usize,
    /// Realizations discarded before this one.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub format_version: u32,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub q: Vec<f64>,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn r_s(&self) -> f64 {
        self.q[0]
    }

    pub fn p_s(&self) -> f64 {
        self.q[1]
    }

    pub fn p_j1(&self) -> f64 {
        self.q[2]
    }

    pub fn w(&self) -> CVec {
        CVec::from_iterator((self.q.len() - 3) / 2, self.q[3..].chunks(2).map(|p| c(p[0], p[1])))
    }
}

/// Seed of sample `index` after `redraw` discarded realizations.
pub fn sample_seed(master: u64, index: usize, redraw: usize) -> u64 {
    derive_seed(master, redraw as u64, index as u64)
}

/// Labels sample `index` with a full FIPSA and SPCA solve. Realizations
/// without a solution are redrawn up to `MAX_REDRAWS` times.
pub fn generate_sample(cfg: &NetworkConfig, master: u64, index: usize, opts: &SpcaOptions) -> Result<Sample> {
    for redraw in 0..=MAX_REDRAWS {
        let seed = sample_seed(master, index, redraw);
        let inst = match solve_instance(cfg, seed, opts) {
            Ok(i) => i,
            Err(e) => {
                log::info!("sample {index}: redraw after {e}");
                continue;
            }
        };
        let Some(sol) = inst.solution else {
            log::info!("sample {index}: redraw {} (no solution)", redraw + 1);
            continue;
        };
        let w = inst.scenario.lift(&canonical_phase(&inst.scenario, &sol.v));
        let mut q = vec![sol.r_s_true.r_s, sol.p_s, sol.p_j1];
        q.extend(w.iter().flat_map(|z| [z.re, z.im]));
        return Ok(Sample {
            format_version: FORMAT_VERSION,
            seed,
            theta: features(cfg, &inst.scenario.ch, FeatureEncoding::Lossless),
            q,
            meta: SampleMeta { n: cfg.n, n_e: cfg.n_e, index, redraws: redraw },
        });
    }
    Err(Error::Exhausted { attempts: MAX_REDRAWS + 1 })
}

/// Reads a dataset, dropping a trailing partial line left by an interrupted
/// run. Returns the samples and whether anything was dropped.
pub fn read_dataset(path: &Path) -> Result<(Vec<Sample>, bool)> {
    let text = std::fs::read_to_string(path)?;
    let mut out = vec![];
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    for (i, l) in lines.iter().enumerate() {
        match serde_json::from_str::<Sample>(l) {
            Ok(s) => out.push(s),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: dropping partial last line ({e})", path.display());
                return Ok((out, true));
            }
            Err(e) => return Err(e.into()),
        }
    }
    for s in &out {
        if s.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "{}: sample format_version {} is not supported",
                path.display(),
                s.format_version
            )));
        }
    }
    Ok((out, false))
}

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Samples written between flushes.
const DATASET_CHUNK: usize = 64;

/// Generates `k` samples. With a path the file is appended chunk by chunk
/// and an existing prefix generated under the same configuration and master
/// seed is reused, so an interrupted run resumes where it stopped.
pub fn generate_dataset(
    cfg: &NetworkConfig,
    k: usize,
    master: u64,
    opts: &SpcaOptions,
    exec: Execution,
    path: Option<&Path>,
) -> Result<Vec<Sample>> {
    if k == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    cfg.validate()?;
    let mut samples = vec![];
    if let Some(p) = path.filter(|p| p.exists()) {
        let (existing, dropped) = read_dataset(p)?;
        for (i, s) in existing.iter().enumerate() {
            let matches = s.meta.index == i
                && s.meta.n == cfg.n
                && s.meta.n_e == cfg.n_e
                && s.seed == sample_seed(master, i, s.meta.redraws)
                && s.theta.len() == feature_dim(cfg.n, cfg.n_e);
            if !matches {
                return Err(Error::InvalidArgument(format!(
                    "{}: sample {i} was not generated with this configuration and seed",
                    p.display()
                )));
            }
        }
        samples = existing;
        samples.truncate(k);
        if dropped || samples.len() < k {
            write_dataset(&samples, p)?;
        }
        if !samples.is_empty() {
            log::info!("resuming at sample {} of {k}", samples.len());
        }
    }
    let mut file = match path {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    while samples.len() < k {
        let start = samples.len();
        let idx: Vec<usize> = (start..k.min(start + DATASET_CHUNK)).collect();
        let chunk = par_map(&idx, exec, |_, &i| generate_sample(cfg, master, i, opts));
        for s in chunk {
            let s = s?;
            if let Some(f) = file.as_mut() {
                let mut line = serde_json::to_vec(&s)?;
                line.push(b'\n');
                f.write_all(&line)?;
            }
            samples.push(s);
        }
        if let Some(f) = file.as_mut() {
            f.flush()?;
        }
        log::info!("{} / {k} samples", samples.len());
    }
    let redraws: usize = samples.iter().map(|s| s.meta.redraws).sum();
    log::info!("dataset complete: {k} samples, {redraws} redraws");
    Ok(samples)
}

/// Per-feature mean and floored population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NormStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::InvalidArgument("cannot standardize an empty dataset".into()));
        };
        let dim = first.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("feature rows have different lengths".into()));
        }
        let n = rows.len() as f64;
        let mut mu = vec![0.0; dim];
        for r in &rows {
            for (m, x) in mu.iter_mut().zip(*r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, x), m) in var.iter_mut().zip(*r).zip(&mu) {
                *s += (x - m).powi(2) / n;
            }
        }
        let sigma = var.into_iter().map(|v| v.sqrt().max(SIGMA_FLOOR)).collect();
        Ok(Self { mu, sigma })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mu).zip(&self.sigma).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mu).zip(&self.sigma).map(|((z, m), s)| z * s + m).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs x inputs`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
}

impl Layer {
    fn affine(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.w * x;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        z
    }
}

/// Fully connected network with ReLU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Weight and bias gradients of one layer.
pub type LayerGrad = (DMatrix<f64>, DVector<f64>);

impl Mlp {
    /// He-initialized weights and zero biases for sizes `arch[0] -> ... ->
    /// arch[last]`.
    pub fn new(arch: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if arch.len() < 2 || arch.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid architecture {arch:?}")));
        }
        let last = arch.len() - 2;
        let layers = arch
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let std = (2.0 / io[0] as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(io[1], io[0], |_, _| {
                        let z: f64 = StandardNormal.sample(rng);
                        std * z
                    }),
                    b: DVector::zeros(io[1]),
                    act: if i == last { Activation::Identity } else { Activation::Relu },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.input_dim()];
        a.extend(self.layers.iter().map(|l| l.w.nrows()));
        a
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    /// Inference on a batch stored one sample per column.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Dimension(format!("network expects {} inputs, got {}", self.input_dim(), x.nrows())));
        }
        let mut a = x.clone();
        for l in &self.layers {
            a = l.affine(&a);
            if l.act == Activation::Relu {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(out.as_slice().to_vec())
    }

    /// Mean squared error over every output of the batch.
    pub fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        let out = self.forward_batch(x)?;
        Ok((out - y).norm_squared() / y.len() as f64)
    }

    /// Loss and its gradient. With `dropout = Some((keep, rng))` every hidden
    /// unit is kept with probability `keep` and rescaled by `1/keep`.
    pub fn loss_and_grad(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (f64, Vec<LayerGrad>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        // Derivative of each hidden layer's output with respect to its
        // pre-activation, dropout included.
        let mut gates: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for l in &self.layers {
            let z = l.affine(&a);
            inputs.push(a);
            if l.act == Activation::Relu {
                let mut gate = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                if let Some((keep, rng)) = dropout.as_mut() {
                    gate.apply(|g| *g *= if rng.gen::<f64>() < *keep { 1.0 / *keep } else { 0.0 });
                }
                a = z.component_mul(&gate);
                gates.push(gate);
            } else {
                a = z;
            }
        }
        let diff = a - y;
        let count = y.len() as f64;
        let loss = diff.norm_squared() / count;
        let mut delta = diff * (2.0 / count);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let gw = &delta * inputs[i].transpose();
            let gb = delta.column_sum();
            if i > 0 {
                delta = (l.w.transpose() * &delta).component_mul(&gates[i - 1]);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (loss, grads)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<LayerGrad> = net
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
            .collect();
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[LayerGrad]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (((l, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    p[i] -= step * m[i] / (v[i].sqrt() + eps);
                }
            };
            update(l.w.as_mut_slice(), g.0.as_slice(), m.0.as_mut_slice(), v.0.as_mut_slice());
            update(l.b.as_mut_slice(), g.1.as_slice(), m.1.as_mut_slice(), v.1.as_mut_slice());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// First-moment decay.
    pub decay_rate: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Probability that a hidden unit is kept during training.
    pub keep_prob: f64,
    /// Share of the samples used for training; the rest validates.
    pub train_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 32,
            learning_rate: 1e-3,
            decay_rate: 0.9,
            beta2: 0.999,
            keep_prob: 0.75,
            train_fraction: 0.9,
            hidden: HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.decay_rate) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0, 1)");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("keep_prob must lie in (0, 1]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Deterministic train/validation split of `len` samples.
pub fn split_indices(len: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((len as f64 * train_fraction).round() as usize).clamp(1.min(len), len.saturating_sub(1));
    let val = idx.split_off(n_train);
    (idx, val)
}

/// Training targets: `R_s`, `log10 P_s`, `log10 P_J1` and `w / ||w||`.
pub fn encode_targets(q: &[f64]) -> Vec<f64> {
    let norm = q[3..].iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut t = vec![q[0], q[1].max(f64::MIN_POSITIVE).log10(), q[2].max(f64::MIN_POSITIVE).log10()];
    t.extend(q[3..].iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }));
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    pub encoding: FeatureEncoding,
    pub targets: String,
    pub train_seed: u64,
    pub train_fraction: f64,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub norm: NormStats,
    pub net: Mlp,
    pub meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    w: Vec<f64>,
    rows: usize,
    cols: usize,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    arch: Vec<usize>,
    norm: NormStats,
    layers: Vec<LayerFile>,
    meta: ModelMeta,
}

impl SurrogateModel {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            arch: self.net.arch(),
            norm: self.norm.clone(),
            layers: self
                .net
                .layers
                .iter()
                .map(|l| LayerFile {
                    // Row-major.
                    w: l.w.transpose().as_slice().to_vec(),
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    b: l.b.as_slice().to_vec(),
                    act: l.act,
                })
                .collect(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!("model format_version {} is not supported", file.format_version)));
        }
        let mut layers = vec![];
        for l in file.layers {
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(Error::Dimension(format!("layer {}x{} has {} weights and {} biases", l.rows, l.cols, l.w.len(), l.b.len())));
            }
            layers.push(Layer { w: DMatrix::from_row_slice(l.rows, l.cols, &l.w), b: DVector::from_vec(l.b), act: l.act });
        }
        if layers.is_empty() || layers.windows(2).any(|p| p[0].w.nrows() != p[1].w.ncols()) {
            return Err(Error::Dimension("layer sizes do not chain".into()));
        }
        let net = Mlp { layers };
        if net.arch() != file.arch || file.norm.mu.len() != net.input_dim() || file.norm.sigma.len() != net.input_dim() {
            return Err(Error::Dimension("arch or norm does not match the layers".into()));
        }
        Ok(Self { norm: file.norm, net, meta: file.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub final_val_mse: f64,
}

fn columns(rows: &[Vec<f64>], idx: &[usize]) -> DMatrix<f64> {
    let dim = rows[idx[0]].len();
    DMatrix::from_fn(dim, idx.len(), |r, c| rows[idx[c]][r])
}

/// Minimizes the mean squared error of the encoded targets and returns the
/// epoch with the lowest validation error. Targets are standardized over the
/// training split while training; the inverse map is folded into the output
/// layer of the returned network, so it predicts encoded targets directly.
/// The reported MSEs are in standardized units.
pub fn train(samples: &[Sample], tc: &TrainConfig) -> Result<(SurrogateModel, TrainReport)> {
    tc.validate()?;
    if samples.len() < 2 * tc.batch_size {
        return Err(Error::InvalidArgument(format!(
            "training needs at least {} samples (two batches), got {}",
            2 * tc.batch_size,
            samples.len()
        )));
    }
    let meta0 = &samples[0].meta;
    if samples.iter().any(|s| s.meta.n != meta0.n || s.meta.n_e != meta0.n_e) {
        return Err(Error::InvalidArgument("dataset mixes network sizes".into()));
    }
    let (train_idx, val_idx) = split_indices(samples.len(), tc.train_fraction, tc.seed);
    let norm = NormStats::fit(train_idx.iter().map(|&i| samples[i].theta.as_slice()))?;
    let thetas: Vec<Vec<f64>> = samples.iter().map(|s| norm.normalize(&s.theta)).collect();
    let encoded: Vec<Vec<f64>> = samples.iter().map(|s| encode_targets(&s.q)).collect();
    let target_norm = NormStats::fit(train_idx.iter().map(|&i| encoded[i].as_slice()))?;
    let targets: Vec<Vec<f64>> = encoded.iter().map(|t| target_norm.normalize(t)).collect();
    let (x_val, y_val) = (columns(&thetas, &val_idx), columns(&targets, &val_idx));

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut arch = vec![thetas[0].len()];
    arch.extend(&tc.hidden);
    arch.push(targets[0].len());
    let mut net = Mlp::new(&arch, &mut rng)?;
    let mut adam = Adam::new(&net, tc.learning_rate, tc.decay_rate, tc.beta2);
    let mut report = TrainReport { train_mse: vec![], val_mse: vec![], best_epoch: 0, best_val_mse: f64::INFINITY, final_val_mse: f64::NAN };
    let mut best = net.clone();
    let mut order = train_idx.clone();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let (x, y) = (columns(&thetas, batch), columns(&targets, batch));
            let (loss, grads) = net.loss_and_grad(&x, &y, Some((tc.keep_prob, &mut rng)));
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("batch loss {loss}") });
            }
            sum += loss * batch.len() as f64;
            adam.step(&mut net, &grads);
        }
        let train_mse = sum / order.len() as f64;
        let val_mse = net.mse(&x_val, &y_val)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("validation loss {val_mse}") });
        }
        log::debug!("epoch {epoch}: train {train_mse:.6e} val {val_mse:.6e}");
        report.train_mse.push(train_mse);
        report.val_mse.push(val_mse);
        if val_mse < report.best_val_mse {
            report.best_val_mse = val_mse;
            report.best_epoch = epoch;
            best = net.clone();
        }
    }
    report.final_val_mse = *report.val_mse.last().unwrap_or(&f64::NAN);
    log::info!("best validation MSE {:.6e} at epoch {}", report.best_val_mse, report.best_epoch);
    if let Some(out) = best.layers.last_mut() {
        for (r, (m, s)) in target_norm.mu.iter().zip(&target_norm.sigma).enumerate() {
            out.w.row_mut(r).scale_mut(*s);
            out.b[r] = out.b[r] * s + m;
        }
    }
    let model = SurrogateModel {
        norm,
        net: best,
        meta: ModelMeta {
            n: meta0.n,
            n_e: meta0.n_e,
            encoding: FeatureEncoding::Lossless,
            targets: TARGETS.into(),
            train_seed: tc.seed,
            train_fraction: tc.train_fraction,
            best_epoch: report.best_epoch,
            best_val_mse: report.best_val_mse,
        },
    };
    Ok((model, report))
}

/// Surrogate output after projection onto the power constraints.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub p_s: f64,
    pub p_j1: f64,
    pub v: CVec,
    /// Exact secrecy rate at the projected point.
    pub r_s: f64,
    /// Rate output of the network, for reference only.
    pub r_s_network: f64,
}

/// Runs the network and projects its output: powers are clamped to their
/// caps, `w` is projected onto the null space and then scaled onto the relay
/// power boundary, which only raises the destination SINR for a fixed
/// direction.
pub fn predict(model: &SurrogateModel, scn: &Scenario) -> Result<Prediction> {
    let cfg = &scn.cfg;
    if model.meta.n != cfg.n || model.meta.n_e != cfg.n_e {
        return Err(Error::Dimension(format!(
            "model is for N={} N_E={}, scenario has N={} N_E={}",
            model.meta.n, model.meta.n_e, cfg.n, cfg.n_e
        )));
    }
    if model.meta.targets != TARGETS {
        return Err(Error::InvalidArgument(format!("unknown target encoding {}", model.meta.targets)));
    }
    let theta = model.norm.normalize(&features(cfg, &scn.ch, model.meta.encoding));
    let y = model.net.forward(&theta)?;
    if y.len() != label_dim(cfg.n) {
        return Err(Error::Dimension(format!("network has {} outputs, expected {}", y.len(), label_dim(cfg.n))));
    }
    let clamp = |log_p: f64, cap: f64| 10f64.powf(log_p).clamp(MIN_POWER_FRACTION * cap, cap);
    let p_s = clamp(y[1], cfg.p_t);
    let p_j1 = clamp(y[2], cfg.p_j1_bar);
    // Orthogonal projection onto the null space, in basis coordinates.
    let w = CVec::from_iterator(cfg.n, y[3..].chunks(2).map(|p| c(p[0], p[1])));
    let dir = scn.basis.h_perp.adjoint() * w;
    let (v, r_s) = match boundary_scale(scn, p_s, p_j1, &dir) {
        Some(k) => {
            let v = dir.scale(k);
            let r_s = scn.rate_report(p_s, p_j1, &v).map_or(0.0, |r| r.r_s);
            (v, r_s)
        }
        None => (CVec::zeros(scn.d()), 0.0),
    };
    Ok(Prediction { p_s, p_j1, v, r_s, r_s_network: y[0] })
}

/// Feature extraction, scenario construction, forward pass and projection.
pub fn infer(model: &SurrogateModel, cfg: &NetworkConfig, ch: &ChannelRealization) -> Result<Prediction> {
    predict(model, &Scenario::new(cfg, ch)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub mean_rs_label: f64,
    pub mean_rs_predicted: f64,
    /// Mean predicted rate over mean label rate.
    pub asr_ratio: f64,
    /// Same ratio when the network's `w` is replaced by the closed-form
    /// beamformer at the predicted powers. A diagnostic that separates
    /// power prediction from beamformer prediction.
    pub asr_ratio_closed_form: f64,
    /// MSE of the encoded targets.
    pub mse: f64,
}

/// Compares projected predictions with the labels on `samples`. Channels are
/// regenerated from the sample seeds under `cfg`, which must be the
/// configuration the dataset was generated with.
pub fn evaluate(model: &SurrogateModel, cfg: &NetworkConfig, samples: &[&Sample], exec: Execution) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let rows = par_map(samples, exec, |_, s| -> Result<(f64, f64, f64, f64)> {
        let ch = generate_realization(cfg, &mut RandomState::from_seed(s.seed));
        if features(cfg, &ch, FeatureEncoding::Lossless) != s.theta {
            return Err(Error::InvalidArgument(format!(
                "sample {} does not match the configuration it is evaluated under",
                s.meta.index
            )));
        }
        let scn = Scenario::new(cfg, &ch)?;
        let pred = predict(model, &scn)?;
        let out = model.net.forward(&model.norm.normalize(&s.theta))?;
        let t = encode_targets(&s.q);
        let se = out.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
        let closed = best_beamformer(&scn, pred.p_s, pred.p_j1)
            .and_then(|v| scn.rate_report(pred.p_s, pred.p_j1, &v).ok())
            .map_or(0.0, |r| r.r_s);
        Ok((s.r_s(), pred.r_s, se, closed))
    });
    let rows: Vec<(f64, f64, f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean_rs_label = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_rs_predicted = rows.iter().map(|r| r.1).sum::<f64>() / n;
    Ok(EvalReport {
        samples: rows.len(),
        mean_rs_label,
        mean_rs_predicted,
        asr_ratio: mean_rs_predicted / mean_rs_label,
        asr_ratio_closed_form: rows.iter().map(|r| r.3).sum::<f64>() / n / mean_rs_label,
        mse: rows.iter().map(|r| r.2).sum::<f64>() / n,
    })
}

/// Largest relative deviation between back-propagated and central-difference
/// weight gradients, over `per_layer` random weights of every layer.
pub fn gradient_check(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>, per_layer: usize, rng: &mut impl Rng) -> f64 {
    let (_, grads) = net.loss_and_grad(x, y, None);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (li, l) in net.layers.iter().enumerate() {
        for _ in 0..per_layer {
            let (r, col) = (rng.gen_range(0..l.w.nrows()), rng.gen_range(0..l.w.ncols()));
            let loss_at = |delta: f64| {
                let mut p = net.clone();
                p.layers[li].w[(r, col)] += delta;
                p.mse(x, y).unwrap_or(f64::NAN)
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let analytic = grads[li].0[(r, col)];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-10 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// Worst-case operation count of one SPCA iteration.
pub fn complexity_spca(n: usize, n_e: usize) -> f64 {
    assert!(n > n_e, "complexity_spca needs N > N_E");
    let d = (n - n_e) as f64;
    let e = (n_e + 1) as f64;
    d * d * (2.0 * (d + 1.0).powi(2) + e * e) * (2.0 * (d + 1.0) + e).sqrt()
}

/// `sum 2 I O` over the layers of an architecture.
pub fn complexity_dnn_dims(arch: &[usize]) -> u64 {
    arch.windows(2).map(|io| 2 * io[0] as u64 * io[1] as u64).sum()
}

pub fn complexity_dnn(net: &Mlp) -> u64 {
    complexity_dnn_dims(&net.arch())
}

/// The reference architecture: magnitude-encoded input and output sizes around the
/// default hidden layers.
pub fn magnitude_arch(n: usize, n_e: usize) -> Vec<usize> {
    let (i, o) = magnitude_dims(n, n_e);
    let mut a = vec![i];
    a.extend(HIDDEN);
    a.push(o);
    a
}
