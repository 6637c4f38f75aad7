//! Solver-agnostic conic program container, backed by Clarabel.
//!
//! Programs are built over named scalar variables. Every cone argument is an
//! affine expression; lowering to the backend's `A x + s = b, s in K` form
//! happens in [`solve`].

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Var(pub usize);

/// `Σ coeff * x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: vec![], constant: c }
    }

    pub fn term(v: Var, c: f64) -> Self {
        Self { terms: vec![(v.0, c)], constant: 0.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn add_term(&mut self, v: Var, c: f64) {
        self.terms.push((v.0, c));
    }

    /// Merge duplicate variables and drop exact zeros.
    pub fn compact(&self) -> Self {
        let mut m: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, c) in &self.terms {
            *m.entry(i).or_insert(0.0) += c;
        }
        Self {
            terms: m.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|(_, c)| c.is_finite())
    }
}

impl From<Var> for Affine {
    fn from(v: Var) -> Self {
        Affine::term(v, 1.0)
    }
}

impl From<f64> for Affine {
    fn from(c: f64) -> Self {
        Affine::constant(c)
    }
}

impl<T: Into<Affine>> Add<T> for Affine {
    type Output = Affine;
    fn add(mut self, rhs: T) -> Affine {
        let r = rhs.into();
        self.terms.extend(r.terms);
        self.constant += r.constant;
        self
    }
}

impl<T: Into<Affine>> Sub<T> for Affine {
    type Output = Affine;
    fn sub(self, rhs: T) -> Affine {
        self + (-rhs.into())
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self * -1.0
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(mut self, k: f64) -> Affine {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

impl<T: Into<Affine>> Add<T> for Var {
    type Output = Affine;
    fn add(self, rhs: T) -> Affine {
        Affine::from(self) + rhs
    }
}

impl<T: Into<Affine>> Sub<T> for Var {
    type Output = Affine;
    fn sub(self, rhs: T) -> Affine {
        Affine::from(self) - rhs
    }
}

impl Mul<f64> for Var {
    type Output = Affine;
    fn mul(self, k: f64) -> Affine {
        Affine::term(self, k)
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum Constraint {
    /// `e = 0`.
    Zero(Affine),
    /// `e >= 0`.
    NonNeg(Affine),
    /// `||x|| <= t`.
    Soc { t: Affine, x: Vec<Affine> },
    /// `||x||^2 <= 2 y z`, `y, z >= 0`.
    RotatedSoc { y: Affine, z: Affine, x: Vec<Affine> },
    /// `x^α y^(1-α) >= |z|`, `x, y >= 0`.
    Power { x: Affine, y: Affine, z: Affine, alpha: f64 },
    /// `y exp(x / y) <= z`, `y > 0`.
    Exp { x: Affine, y: Affine, z: Affine },
    /// Real symmetric matrix, upper triangle listed column by column
    /// (`(0,0), (0,1), (1,1), (0,2), ...`), is PSD.
    Psd { dim: usize, upper: Vec<Affine> },
    /// Hermitian matrix with the same upper-triangle layout, given as real
    /// and imaginary parts, is PSD.
    HermitianPsd { dim: usize, re: Vec<Affine>, im: Vec<Affine> },
}

/// Index of entry `(i, j)`, `i <= j`, in the column-major upper triangle.
pub fn triu_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

impl Constraint {
    fn kind(&self) -> &'static str {
        match self {
            Constraint::Zero(_) => "zero",
            Constraint::NonNeg(_) => "nonneg",
            Constraint::Soc { .. } => "soc",
            Constraint::RotatedSoc { .. } => "rotated_soc",
            Constraint::Power { .. } => "power",
            Constraint::Exp { .. } => "exp",
            Constraint::Psd { .. } => "psd",
            Constraint::HermitianPsd { .. } => "hermitian_psd",
        }
    }

    fn exprs(&self) -> Vec<&Affine> {
        match self {
            Constraint::Zero(e) | Constraint::NonNeg(e) => vec![e],
            Constraint::Soc { t, x } => std::iter::once(t).chain(x).collect(),
            Constraint::RotatedSoc { y, z, x } => [y, z].into_iter().chain(x).collect(),
            Constraint::Power { x, y, z, .. } | Constraint::Exp { x, y, z } => vec![x, y, z],
            Constraint::Psd { upper, .. } => upper.iter().collect(),
            Constraint::HermitianPsd { re, im, .. } => re.iter().chain(im).collect(),
        }
    }

    /// Real symmetric PSD equivalent of a Hermitian constraint via the
    /// `[Re -Im; Im Re]` embedding. Other constraints are returned as is.
    pub fn lower_hermitian(&self) -> Constraint {
        let Constraint::HermitianPsd { dim, re, im } = self else {
            return self.clone();
        };
        let n = *dim;
        let entry = |i: usize, j: usize| -> (Affine, Affine) {
            if i <= j {
                let k = triu_index(i, j);
                (re[k].clone(), im[k].clone())
            } else {
                let k = triu_index(j, i);
                (re[k].clone(), -im[k].clone())
            }
        };
        let mut upper = Vec::with_capacity(2 * n * (2 * n + 1) / 2);
        for j in 0..2 * n {
            for i in 0..=j {
                let e = match (i < n, j < n) {
                    (true, true) => entry(i, j).0,
                    (false, false) => entry(i - n, j - n).0,
                    // Block (0,1) is -B.
                    (true, false) => -entry(i, j - n).1,
                    (false, true) => unreachable!("upper triangle"),
                };
                upper.push(e);
            }
        }
        Constraint::Psd { dim: 2 * n, upper }
    }

    /// Scaled violation of this constraint at `x`: zero when satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let ev = |e: &Affine| e.eval(x);
        let scale = |vals: &[f64]| vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        match self {
            Constraint::Zero(e) => {
                let v = ev(e);
                v.abs() / scale(&[v])
            }
            Constraint::NonNeg(e) => {
                let v = ev(e);
                (-v).max(0.0) / scale(&[v])
            }
            Constraint::Soc { t, x: xs } => {
                let t = ev(t);
                let xs: Vec<f64> = xs.iter().map(ev).collect();
                let nx = xs.iter().map(|a| a * a).sum::<f64>().sqrt();
                (nx - t).max(0.0) / scale(&[t, nx])
            }
            Constraint::RotatedSoc { y, z, x: xs } => {
                let (y, z) = (ev(y), ev(z));
                let xs: Vec<f64> = xs.iter().map(ev).collect();
                let nx2 = xs.iter().map(|a| a * a).sum::<f64>();
                let r = ((nx2 + 0.5 * (y - z).powi(2)).sqrt() - (y + z) / std::f64::consts::SQRT_2).max(0.0);
                r.max(-y).max(-z).max(0.0) / scale(&[y, z, nx2.sqrt()])
            }
            Constraint::Power { x: a, y: b, z: c, alpha } => {
                let (a, b, c) = (ev(a), ev(b), ev(c));
                let g = a.max(0.0).powf(*alpha) * b.max(0.0).powf(1.0 - alpha);
                (c.abs() - g).max(-a).max(-b).max(0.0) / scale(&[a, b, c])
            }
            Constraint::Exp { x: a, y: b, z: c } => {
                let (a, b, c) = (ev(a), ev(b), ev(c));
                let v = if b > 0.0 {
                    let lhs = b * (a / b).exp();
                    if lhs.is_finite() { lhs - c } else { f64::INFINITY }
                } else {
                    a.max(-b).max(-c).max(0.0)
                };
                v.max(0.0) / scale(&[a, b, c])
            }
            Constraint::Psd { dim, upper } => {
                let m = sym_from_upper(*dim, &upper.iter().map(ev).collect::<Vec<_>>());
                let amax = m.amax();
                let lmin = m.symmetric_eigen().eigenvalues.min();
                (-lmin).max(0.0) / amax.max(1.0)
            }
            Constraint::HermitianPsd { .. } => self.lower_hermitian().violation(x),
        }
    }
}

fn sym_from_upper(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            m[(i, j)] = vals[triu_index(i, j)];
            m[(j, i)] = vals[triu_index(i, j)];
        }
    }
    m
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConicProgram {
    pub names: Vec<String>,
    /// Maximized.
    pub objective: Affine,
    pub constraints: Vec<(String, Constraint)>,
    /// Typical magnitude per variable. The backend solves for `x / scale`,
    /// which keeps badly scaled programs well conditioned.
    pub scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub solve_time: f64,
    pub iterations: u32,
    /// Backend status name, kept for diagnostics.
    pub detail: String,
}

impl SolveResult {
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        Var(self.names.len() - 1)
    }

    pub fn vars(&mut self, name: &str, n: usize) -> Vec<Var> {
        (0..n).map(|i| self.var(format!("{name}[{i}]"))).collect()
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn maximize(&mut self, obj: impl Into<Affine>) {
        self.objective = obj.into();
    }

    pub fn add(&mut self, label: impl Into<String>, c: Constraint) {
        self.constraints.push((label.into(), c));
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let ok_expr = |e: &Affine| e.is_finite() && e.terms.iter().all(|&(i, _)| i < n);
        if !ok_expr(&self.objective) {
            return Err(Error::InvalidArgument("objective references bad data".into()));
        }
        for (label, c) in &self.constraints {
            if !c.exprs().into_iter().all(ok_expr) {
                return Err(Error::InvalidArgument(format!(
                    "constraint '{label}' references an undeclared variable or non-finite data"
                )));
            }
            match c {
                Constraint::Power { alpha, .. } if !(*alpha > 0.0 && *alpha < 1.0) => {
                    return Err(Error::InvalidArgument(format!("'{label}': power exponent {alpha}")));
                }
                Constraint::Psd { dim, upper } if upper.len() != dim * (dim + 1) / 2 => {
                    return Err(Error::InvalidArgument(format!("'{label}': wrong triangle size")));
                }
                Constraint::HermitianPsd { dim, re, im }
                    if re.len() != dim * (dim + 1) / 2 || im.len() != re.len() =>
                {
                    return Err(Error::InvalidArgument(format!("'{label}': wrong triangle size")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Largest scaled constraint violation at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|(_, c)| c.violation(x))
            .fold(0.0, f64::max)
    }

    /// Per-constraint violations, largest first.
    pub fn residual_report(&self, x: &[f64]) -> Vec<(String, f64)> {
        let mut r: Vec<(String, f64)> = self
            .constraints
            .iter()
            .map(|(l, c)| (l.clone(), c.violation(x)))
            .collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r
    }

    /// Debug dump: variables, the maximized objective, and per constraint the
    /// cone kind with its rows as sparse `[row, var, coeff]` triplets plus
    /// the constant column.
    pub fn to_json(&self) -> serde_json::Value {
        let trip = |e: &Affine| e.compact().terms.iter().map(|&(i, c)| json!([i, c])).collect::<Vec<_>>();
        let cons: Vec<_> = self
            .constraints
            .iter()
            .map(|(label, c)| {
                let rows = c.exprs();
                let triplets: Vec<_> = rows
                    .iter()
                    .enumerate()
                    .flat_map(|(r, e)| e.compact().terms.into_iter().map(move |(i, k)| json!([r, i, k])))
                    .collect();
                let mut o = json!({
                    "label": label,
                    "cone": c.kind(),
                    "rows": rows.len(),
                    "triplets": triplets,
                    "constant": rows.iter().map(|e| e.constant).collect::<Vec<_>>(),
                });
                match c {
                    Constraint::Power { alpha, .. } => o["alpha"] = json!(alpha),
                    Constraint::Psd { dim, .. } | Constraint::HermitianPsd { dim, .. } => o["dim"] = json!(dim),
                    _ => {}
                }
                o
            })
            .collect();
        json!({
            "format_version": 1,
            "sense": "maximize",
            "variables": self.names,
            "objective": {"terms": trip(&self.objective), "constant": self.objective.constant},
            "constraints": cons,
        })
    }
}

struct Lowered {
    rows: Vec<Affine>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Lowered {
    fn push(&mut self, rows: Vec<Affine>, cone: SupportedConeT<f64>) {
        // Merge runs of scalar zero / nonnegative cones.
        use SupportedConeT::*;
        match (self.cones.last_mut(), &cone) {
            (Some(ZeroConeT(k)), ZeroConeT(m)) => *k += m,
            (Some(NonnegativeConeT(k)), NonnegativeConeT(m)) => *k += m,
            _ => self.cones.push(cone),
        }
        self.rows.extend(rows);
    }
}

fn lower(p: &ConicProgram) -> Lowered {
    use SupportedConeT::*;
    let s2 = std::f64::consts::SQRT_2;
    let mut out = Lowered { rows: vec![], cones: vec![] };
    for (_, c) in &p.constraints {
        match c.lower_hermitian() {
            Constraint::Zero(e) => out.push(vec![e], ZeroConeT(1)),
            Constraint::NonNeg(e) => out.push(vec![e], NonnegativeConeT(1)),
            Constraint::Soc { t, x } => {
                let n = x.len() + 1;
                out.push(std::iter::once(t).chain(x).collect(), SecondOrderConeT(n));
            }
            Constraint::RotatedSoc { y, z, x } => {
                let n = x.len() + 2;
                let t = (y.clone() + z.clone()) * (1.0 / s2);
                let d = (y - z) * (1.0 / s2);
                out.push([t, d].into_iter().chain(x).collect(), SecondOrderConeT(n));
            }
            Constraint::Power { x, y, z, alpha } => out.push(vec![x, y, z], PowerConeT(alpha)),
            Constraint::Exp { x, y, z } => out.push(vec![x, y, z], ExponentialConeT()),
            Constraint::Psd { dim, upper } => {
                let rows = (0..dim)
                    .flat_map(|j| (0..=j).map(move |i| (i, j)))
                    .map(|(i, j)| {
                        let e = upper[triu_index(i, j)].clone();
                        if i == j { e } else { e * s2 }
                    })
                    .collect();
                out.push(rows, PSDTriangleConeT(dim));
            }
            Constraint::HermitianPsd { .. } => unreachable!("lowered above"),
        }
    }
    out
}

/// Backend tolerances used by [`solve`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub gap: f64,
    pub feas: f64,
    pub max_iter: u32,
    /// Fraction of the distance to the cone boundary taken per interior-point
    /// step. Below the backend default because the SPCA programs mix
    /// magnitudes over many decades.
    pub max_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { gap: 1e-8, feas: 1e-9, max_iter: 200, max_step: 0.9 }
    }
}

pub fn solve(p: &ConicProgram, tol: Tolerances) -> Result<SolveResult> {
    p.validate()?;
    let n = p.num_vars();
    let low = lower(p);
    let m = low.rows.len();
    let (mut ri, mut ci, mut vs) = (vec![], vec![], vec![]);
    let mut b = Vec::with_capacity(m);
    for (r, e) in low.rows.iter().enumerate() {
        for (i, c) in e.compact().terms {
            ri.push(r);
            ci.push(i);
            vs.push(-c);
        }
        b.push(e.constant);
    }
    let scale: Vec<f64> = match &p.scales {
        Some(s) if s.len() == n && s.iter().all(|x| x.is_finite() && *x > 0.0) => s.clone(),
        Some(_) => return Err(Error::InvalidArgument("variable scales must be positive and one per variable".into())),
        None => vec![1.0; n],
    };
    for (v, c) in vs.iter_mut().zip(&ci) {
        *v *= scale[*c];
    }
    let mut q = vec![0.0; n];
    for (i, c) in p.objective.compact().terms {
        q[i] = -c * scale[i];
    }
    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vs);
    let pm = CscMatrix::<f64>::zeros((n, n));
    // A numerical failure is retried with shorter steps, then with looser
    // tolerances. Solve time accumulates over attempts.
    let ladder = [
        tol,
        Tolerances { max_step: tol.max_step * 0.8, ..tol },
        Tolerances { gap: tol.gap * 100.0, feas: tol.feas * 100.0, max_step: tol.max_step * 0.8, ..tol },
    ];
    let start = Instant::now();
    let mut last = None;
    for (attempt, t) in ladder.iter().enumerate() {
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(t.gap)
            .tol_gap_rel(t.gap)
            .tol_feas(t.feas)
            .max_iter(t.max_iter)
            .max_step_fraction(t.max_step)
            .build()
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&pm, &q, &a, &b, &low.cones, settings)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::NumericalFailure,
        };
        let values: Vec<f64> = sol.x.iter().zip(&scale).map(|(x, s)| x * s).collect();
        let objective = p.objective.eval(&values);
        let mut detail = format!("{:?}", sol.status);
        if attempt > 0 {
            detail.push_str(&format!(" (attempt {})", attempt + 1));
        }
        let res = SolveResult {
            status,
            objective,
            values,
            solve_time: start.elapsed().as_secs_f64(),
            iterations: sol.iterations,
            detail,
        };
        if status != SolveStatus::NumericalFailure {
            return Ok(res);
        }
        last = Some(res);
    }
    Ok(last.expect("ladder is non-empty"))
}
