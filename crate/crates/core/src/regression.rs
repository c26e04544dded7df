//! Linear epsilon-insensitive support vector regression.
//!
//! The solver minimises the primal
//!
//! ```text
//! F(w, b) = ½‖w‖² + C Σᵢ max(0, |yᵢ − (w·xᵢ + b)| − ε)
//! ```
//!
//! by sequential minimal optimisation on the dual (two multipliers per
//! step, second-order working-set selection). With a linear kernel the dual
//! gradient is recovered from the running weight vector, so no kernel matrix
//! is stored. After every few steps the primal is evaluated at the current
//! weights with the intercept minimised exactly; the best primal point seen
//! is kept as the incumbent, which makes the recorded objective trace
//! non-increasing. The duality gap between the incumbent and the dual value
//! bounds the remaining improvement and drives termination.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::stats::{self, StandardizationParams, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid hyperparameters: C = {c}, epsilon = {epsilon}")]
    InvalidHyperparams { c: f64, epsilon: f64 },
    #[error("target has zero variance")]
    ZeroVariance,
    #[error("model has no trained features")]
    UntrainedModel,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
}

impl Hyperparams {
    pub fn new(c: f64, epsilon: f64) -> Result<Self, RegressionError> {
        let h = Hyperparams { c, epsilon };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), RegressionError> {
        if self.c > 0.0 && self.c.is_finite() && self.epsilon >= 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(RegressionError::InvalidHyperparams { c: self.c, epsilon: self.epsilon })
        }
    }
}

pub const DEFAULT_C_GRID: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_EPSILON_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

/// Cartesian product of C values and epsilon values, C-major.
pub fn make_grid(cs: &[f64], epsilons: &[f64]) -> Vec<Hyperparams> {
    cs.iter().flat_map(|&c| epsilons.iter().map(move |&epsilon| Hyperparams { c, epsilon })).collect()
}

pub fn default_grid() -> Vec<Hyperparams> {
    make_grid(&DEFAULT_C_GRID, &DEFAULT_EPSILON_GRID)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Relative duality gap at which the solver stops.
    pub tol: f64,
    /// Relative gap above which a capped run is flagged as non-converged.
    pub warn_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 200_000, tol: 1e-8, warn_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub iterations: usize,
    pub converged: bool,
    /// Final relative duality gap.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub hyper: Hyperparams,
    pub objective: f64,
    pub status: SolverStatus,
    /// (iteration, incumbent objective) at each primal check.
    #[serde(skip)]
    pub trace: Vec<(usize, f64)>,
}

impl SvrSolution {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// Plain-text `iteration objective` lines.
    pub fn write_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# C={} epsilon={}", self.hyper.c, self.hyper.epsilon)?;
        for (it, obj) in &self.trace {
            writeln!(out, "{it}\t{obj:.12e}")?;
        }
        writeln!(
            out,
            "# iterations={} converged={} relative_gap={:e}",
            self.status.iterations, self.status.converged, self.status.relative_gap
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize, RegressionError> {
    if x.len() != y.len() {
        return Err(RegressionError::DimensionMismatch(format!("{} rows vs {} targets", x.len(), y.len())));
    }
    let d = x.first().map_or(0, Vec::len);
    if let Some(r) = x.iter().position(|r| r.len() != d) {
        return Err(RegressionError::DimensionMismatch(format!("row {r} has {} features, expected {d}", x[r].len())));
    }
    Ok(d)
}

/// Sum of dead-zone losses `Σ max(0, |rᵢ − b| − ε)`.
fn tube_loss(residuals: &[f64], b: f64, epsilon: f64) -> f64 {
    residuals.iter().map(|r| ((r - b).abs() - epsilon).max(0.0)).sum()
}

/// Exact minimiser of the tube loss over the intercept. The loss is convex
/// and piecewise linear with breakpoints `rᵢ ± ε`; its minimisers form an
/// interval `[lo, hi]`, and the returned point is the residual mean clamped
/// into that interval.
pub fn best_intercept(residuals: &[f64], epsilon: f64) -> f64 {
    let n = residuals.len();
    let mut lows: Vec<f64> = residuals.iter().map(|r| r - epsilon).collect();
    let mut highs: Vec<f64> = residuals.iter().map(|r| r + epsilon).collect();
    lows.sort_by(f64::total_cmp);
    highs.sort_by(f64::total_cmp);
    let count_le = |v: &[f64], t: f64| v.partition_point(|x| *x <= t);
    let count_lt = |v: &[f64], t: f64| v.partition_point(|x| *x < t);
    // Right derivative at b: #{hᵢ ≤ b} − #{lᵢ > b}; left: #{hᵢ < b} − #{lᵢ ≥ b}.
    let right = |b: f64| count_le(&highs, b) as i64 - (n - count_le(&lows, b)) as i64;
    let left = |b: f64| count_lt(&highs, b) as i64 - (n - count_lt(&lows, b)) as i64;
    let mut breaks: Vec<f64> = lows.iter().chain(&highs).copied().collect();
    breaks.sort_by(f64::total_cmp);
    let lo = breaks.iter().copied().find(|&b| right(b) >= 0).unwrap_or(breaks[breaks.len() - 1]);
    let hi = breaks.iter().rev().copied().find(|&b| left(b) <= 0).unwrap_or(breaks[0]);
    let mean = residuals.iter().sum::<f64>() / n as f64;
    if lo <= hi {
        mean.clamp(lo, hi)
    } else {
        lo
    }
}

/// Primal objective at (w, b).
pub fn primal_objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, hyper: Hyperparams) -> f64 {
    let reg = 0.5 * dot(w, w);
    let loss: f64 = x.iter().zip(y).map(|(xi, yi)| ((yi - dot(w, xi) - b).abs() - hyper.epsilon).max(0.0)).sum();
    reg + hyper.c * loss
}

struct Smo<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    n: usize,
    c: f64,
    eps: f64,
    /// β[t] for t < n is αₜ (sign +1); for t ≥ n it is α*ₜ₋ₙ (sign −1).
    beta: Vec<f64>,
    w: Vec<f64>,
    /// Row-major Gram matrix of the design.
    gram: Vec<f64>,
    /// Cached margins `w·xᵢ`, updated with `w`.
    f: Vec<f64>,
}

impl<'a> Smo<'a> {
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    fn row(&self, t: usize) -> usize {
        t % self.n
    }

    fn linear(&self, t: usize) -> f64 {
        let i = self.row(t);
        if t < self.n {
            self.eps - self.y[i]
        } else {
            self.eps + self.y[i]
        }
    }

    fn grad(&self, t: usize) -> f64 {
        self.sign(t) * self.f[self.row(t)] + self.linear(t)
    }

    fn in_up(&self, t: usize) -> bool {
        if t < self.n {
            self.beta[t] < self.c
        } else {
            self.beta[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if t < self.n {
            self.beta[t] > 0.0
        } else {
            self.beta[t] < self.c
        }
    }

    fn kernel(&self, s: usize, t: usize) -> f64 {
        self.gram[self.row(s) * self.n + self.row(t)]
    }

    fn sq(&self, t: usize) -> f64 {
        self.kernel(t, t)
    }

    /// Dual objective in minimisation form: ½‖w‖² + Σ pₜβₜ.
    fn dual_min(&self) -> f64 {
        0.5 * dot(&self.w, &self.w) + (0..2 * self.n).map(|t| self.linear(t) * self.beta[t]).sum::<f64>()
    }

    fn rebuild_w(&mut self) {
        let d = self.w.len();
        let mut w = vec![0.0; d];
        for i in 0..self.n {
            let coef = self.beta[i] - self.beta[i + self.n];
            if coef != 0.0 {
                for (wk, xk) in w.iter_mut().zip(&self.x[i]) {
                    *wk += coef * xk;
                }
            }
        }
        self.f = self.x.iter().map(|r| dot(&w, r)).collect();
        self.w = w;
    }

    /// Picks a maximal-violating pair; returns `None` when the KKT
    /// violation is below `kkt_tol`.
    fn select(&self, grads: &[f64], kkt_tol: f64) -> Option<(usize, usize)> {
        const TAU: f64 = 1e-12;
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..2 * self.n {
            if self.in_up(t) {
                let v = -self.sign(t) * grads[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..2 * self.n {
            if !self.in_low(t) {
                continue;
            }
            let v = -self.sign(t) * grads[t];
            gmin = gmin.min(v);
            let diff = gmax - v;
            if diff > 0.0 {
                let mut a = self.sq(i) + self.sq(t) - 2.0 * self.kernel(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let score = -(diff * diff) / a;
                if score < best {
                    best = score;
                    j_sel = Some(t);
                }
            }
        }
        if gmax - gmin < kkt_tol {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize, gi: f64, gj: f64) {
        const TAU: f64 = 1e-12;
        let c = self.c;
        let kij = self.kernel(i, j);
        let (si, sj) = (self.sign(i), self.sign(j));
        let (old_i, old_j) = (self.beta[i], self.beta[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let qd = self.sq(i) + self.sq(j);
        if si != sj {
            let quad = (qd - 2.0 * kij).max(TAU);
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qd - 2.0 * kij).max(TAU);
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.beta[i] = ai;
        self.beta[j] = aj;
        let (ri, rj) = (self.row(i), self.row(j));
        let di = si * (ai - old_i);
        let dj = sj * (aj - old_j);
        for k in 0..self.w.len() {
            self.w[k] += di * self.x[ri][k] + dj * self.x[rj][k];
        }
        let n = self.n;
        let (gi, gj) = (&self.gram[ri * n..(ri + 1) * n], &self.gram[rj * n..(rj + 1) * n]);
        for (k, fk) in self.f.iter_mut().enumerate() {
            *fk += di * gi[k] + dj * gj[k];
        }
    }
}

/// Fits a linear SVR on a (standardised) design matrix.
pub fn train_svr(
    x: &[Vec<f64>],
    y: &[f64],
    hyper: Hyperparams,
    opts: &SolverOptions,
) -> Result<SvrSolution, RegressionError> {
    hyper.validate()?;
    let d = check_design(x, y)?;
    if y.len() < 2 {
        return Err(RegressionError::DimensionMismatch(format!("need at least 2 rows, got {}", y.len())));
    }
    if d == 0 {
        return Err(RegressionError::DimensionMismatch("no features".into()));
    }
    let n = y.len();
    let mut smo = Smo {
        x,
        y,
        n,
        c: hyper.c,
        eps: hyper.epsilon,
        beta: vec![0.0; 2 * n],
        w: vec![0.0; d],
        gram: x.iter().flat_map(|a| x.iter().map(move |b| dot(a, b))).collect(),
        f: vec![0.0; n],
    };

    let primal_at = |w: &[f64], f: &[f64]| {
        let residuals: Vec<f64> = y.iter().zip(f).map(|(yi, fi)| yi - fi).collect();
        let b = best_intercept(&residuals, hyper.epsilon);
        let obj = 0.5 * dot(w, w) + hyper.c * tube_loss(&residuals, b, hyper.epsilon);
        (b, obj)
    };

    let (b0, obj0) = primal_at(&smo.w, &smo.f);
    let mut best_w = smo.w.clone();
    let mut best_b = b0;
    let mut best_obj = obj0;
    let mut trace = vec![(0, best_obj)];
    let rel_gap = |primal: f64, dual_min: f64| (primal + dual_min).max(0.0) / primal.abs().max(1e-6);

    let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max) + hyper.epsilon;
    let kkt_tol = 1e-13 * scale;
    let mut grads = vec![0.0; 2 * n];
    let mut iterations = 0;
    let mut gap = rel_gap(best_obj, smo.dual_min());
    // Primal checks cost O(n log n); keep them rarer than O(n) steps.
    let check_every = (n / 4).max(4);

    while gap > opts.tol && iterations < opts.max_iter {
        for (t, g) in grads.iter_mut().enumerate() {
            *g = smo.grad(t);
        }
        let Some((i, j)) = smo.select(&grads, kkt_tol) else {
            break;
        };
        smo.update(i, j, grads[i], grads[j]);
        iterations += 1;
        if iterations % 1000 == 0 {
            smo.rebuild_w();
        }
        if iterations % check_every == 0 {
            let (b, obj) = primal_at(&smo.w, &smo.f);
            if obj < best_obj {
                best_obj = obj;
                best_w.clone_from(&smo.w);
                best_b = b;
            }
            trace.push((iterations, best_obj));
            gap = rel_gap(best_obj, smo.dual_min());
        }
    }
    smo.rebuild_w();
    let (b, obj) = primal_at(&smo.w, &smo.f);
    if obj < best_obj {
        best_obj = obj;
        best_w.clone_from(&smo.w);
        best_b = b;
    }
    if trace.last().map(|t| t.0) != Some(iterations) {
        trace.push((iterations, best_obj));
    }
    gap = rel_gap(best_obj, smo.dual_min());
    // Report F exactly at the returned point.
    let objective = primal_objective(x, y, &best_w, best_b, hyper);
    Ok(SvrSolution {
        w: best_w,
        b: best_b,
        hyper,
        objective,
        status: SolverStatus { iterations, converged: gap <= opts.warn_tol, relative_gap: gap },
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Mode {
    /// 1 − SSE/SST.
    #[default]
    Determination,
    /// Squared Pearson correlation of predictions with targets.
    PearsonSquared,
}

impl FromStr for R2Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "determination" => Ok(R2Mode::Determination),
            "pearson_squared" => Ok(R2Mode::PearsonSquared),
            other => Err(format!("unknown r2 mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub rmse: f64,
    pub r2: f64,
}

/// RMSE and R² of predictions against targets.
pub fn fit_metrics(pred: &[f64], y: &[f64], mode: R2Mode) -> Result<FitMetrics, RegressionError> {
    if pred.len() != y.len() || y.is_empty() {
        return Err(RegressionError::DimensionMismatch(format!("{} predictions vs {} targets", pred.len(), y.len())));
    }
    let n = y.len() as f64;
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (t - p).powi(2)).sum();
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(RegressionError::ZeroVariance);
    }
    let r2 = match mode {
        R2Mode::Determination => 1.0 - sse / sst,
        R2Mode::PearsonSquared => match stats::pearson(pred, y) {
            Ok(r) => r * r,
            Err(_) => 0.0,
        },
    };
    Ok(FitMetrics { rmse: (sse / n).sqrt(), r2 })
}

pub fn evaluate(
    model: &SvrSolution,
    x: &[Vec<f64>],
    y: &[f64],
    mode: R2Mode,
) -> Result<FitMetrics, RegressionError> {
    check_design(x, y)?;
    if let Some(r) = x.iter().find(|r| r.len() != model.w.len()) {
        return Err(RegressionError::DimensionMismatch(format!("{} features vs model {}", r.len(), model.w.len())));
    }
    let pred: Vec<f64> = x.iter().map(|r| model.predict(r)).collect();
    fit_metrics(&pred, y, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub hyper: Hyperparams,
    pub mean_rmse: f64,
}

fn subset(x: &[Vec<f64>], y: &[f64], idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
}

/// k-fold cross-validated grid search. Fold assignments are drawn once and
/// shared by every grid point; grid points are evaluated in parallel and
/// reported in grid order. The winner has the smallest mean validation
/// RMSE, then the smaller C, then the smaller epsilon.
pub fn grid_search(
    x: &[Vec<f64>],
    y: &[f64],
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<(Hyperparams, Vec<CvEntry>), RegressionError> {
    if grid.is_empty() {
        return Err(RegressionError::EmptyGrid);
    }
    check_design(x, y)?;
    let folds = stats::kfold_indices(y.len(), k, seed)?;
    let cv_table = grid
        .par_iter()
        .map(|&hyper| {
            let mut total = 0.0;
            for (fit, val) in &folds {
                let (xf, yf) = subset(x, y, fit);
                let (xv, yv) = subset(x, y, val);
                let model = train_svr(&xf, &yf, hyper, opts)?;
                let sse: f64 = xv.iter().zip(&yv).map(|(r, t)| (t - model.predict(r)).powi(2)).sum();
                total += (sse / yv.len() as f64).sqrt();
            }
            Ok(CvEntry { hyper, mean_rmse: total / folds.len() as f64 })
        })
        .collect::<Result<Vec<_>, RegressionError>>()?;
    let best = cv_table
        .iter()
        .min_by(|a, b| {
            a.mean_rmse
                .total_cmp(&b.mean_rmse)
                .then(a.hyper.c.total_cmp(&b.hyper.c))
                .then(a.hyper.epsilon.total_cmp(&b.hyper.epsilon))
        })
        .expect("grid is non-empty")
        .hyper;
    Ok((best, cv_table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// |wⱼ| in standardised space.
    #[default]
    Coef,
    /// R² of a univariate quadratic fit of the target on each feature.
    UnivariateR2,
}

impl FromStr for ImportanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coef" => Ok(ImportanceMode::Coef),
            "univariate_r2" => Ok(ImportanceMode::UnivariateR2),
            other => Err(format!("unknown importance mode {other:?}")),
        }
    }
}

impl fmt::Display for ImportanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImportanceMode::Coef => "coef",
            ImportanceMode::UnivariateR2 => "univariate_r2",
        })
    }
}

/// Min-max rescaling of raw scores onto [0, 100]. A single feature, or a
/// set of identical scores, maps to 100.
pub fn scale_0_100(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    if raw.len() < 2 || max == min {
        return vec![100.0; raw.len()];
    }
    raw.iter()
        .map(|s| if *s == max { 100.0 } else { 100.0 * (s - min) / (max - min) })
        .collect()
}

fn univariate_quadratic_r2(x: &[f64], y: &[f64]) -> f64 {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    linalg::ols_r2(&[x.to_vec(), sq], y)
        .or_else(|| linalg::ols_r2(&[x.to_vec()], y))
        .map_or(0.0, |(_, r2)| r2.clamp(0.0, 1.0))
}

/// Feature importance on a 0–100 scale.
pub fn importance(
    features: &[String],
    model: &SvrSolution,
    x: &[Vec<f64>],
    y: &[f64],
    mode: ImportanceMode,
) -> Result<BTreeMap<String, f64>, RegressionError> {
    if model.w.is_empty() || features.is_empty() {
        return Err(RegressionError::UntrainedModel);
    }
    if features.len() != model.w.len() {
        return Err(RegressionError::DimensionMismatch(format!(
            "{} feature names vs {} weights",
            features.len(),
            model.w.len()
        )));
    }
    let raw: Vec<f64> = match mode {
        ImportanceMode::Coef => model.w.iter().map(|w| w.abs()).collect(),
        ImportanceMode::UnivariateR2 => {
            check_design(x, y)?;
            (0..features.len())
                .map(|j| {
                    let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
                    univariate_quadratic_r2(&col, y)
                })
                .collect()
        }
    };
    Ok(features.iter().cloned().zip(scale_0_100(&raw)).collect())
}

/// Affine map from model output to target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub sd: f64,
}

impl Default for TargetScale {
    fn default() -> Self {
        TargetScale { mean: 0.0, sd: 1.0 }
    }
}

/// A trained SVR bound to its feature names and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvrModel {
    pub features: Vec<String>,
    pub target: String,
    pub w: Vec<f64>,
    pub b: f64,
    pub hyper: Hyperparams,
    pub objective: f64,
    pub status: SolverStatus,
    pub standardization: StandardizationParams,
    pub target_scale: TargetScale,
}

impl LinearSvrModel {
    pub fn from_solution(
        solution: &SvrSolution,
        features: Vec<String>,
        target: String,
        standardization: StandardizationParams,
        target_scale: TargetScale,
    ) -> Result<Self, RegressionError> {
        if features.len() != solution.w.len() || standardization.mu.len() != solution.w.len() {
            return Err(RegressionError::DimensionMismatch("feature names, scaling and weights differ in length".into()));
        }
        Ok(LinearSvrModel {
            features,
            target,
            w: solution.w.clone(),
            b: solution.b,
            hyper: solution.hyper,
            objective: solution.objective,
            status: solution.status.clone(),
            standardization,
            target_scale,
        })
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    /// Output for a standardised feature vector, in standardised target units.
    pub fn predict_standardized(&self, z: &[f64]) -> f64 {
        dot(&self.w, z) + self.b
    }

    /// Output for a raw feature vector, in raw target units.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let z = self.standardization.transform(x);
        self.target_scale.mean + self.target_scale.sd * self.predict_standardized(&z)
    }

    /// Weight of each raw feature in raw target units: `sd_y · wⱼ / σⱼ`.
    pub fn raw_weights(&self) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.standardization.sigma)
            .map(|(w, s)| self.target_scale.sd * w / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: LinearSvrModel,
    pub train: FitMetrics,
    pub test: FitMetrics,
    pub cv_table: Vec<CvEntry>,
    pub importance: BTreeMap<String, f64>,
    pub importance_mode: ImportanceMode,
    pub r2_mode: R2Mode,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn constant_target_gives_zero_model() {
        let x = vec![vec![-1.0], vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![3.0; 4];
        let m = train_svr(&x, &y, Hyperparams { c: 1.0, epsilon: 0.1 }, &opts()).unwrap();
        assert!(m.w[0].abs() < 1e-12);
        assert!((m.b - 3.0).abs() < 1e-12);
        assert!(m.objective.abs() < 1e-12);
    }

    #[test]
    fn wide_tube_prefers_mean_intercept() {
        let x = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let y = vec![1.0, 2.0, 4.0];
        let m = train_svr(&x, &y, Hyperparams { c: 1.0, epsilon: 5.0 }, &opts()).unwrap();
        assert_eq!(m.w, vec![0.0]);
        assert!((m.b - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.objective, 0.0);
    }

    #[test]
    fn reported_objective_matches_primal() {
        let x = vec![vec![1.0, 0.5], vec![2.0, -1.0], vec![3.0, 0.0], vec![-1.0, 2.0], vec![0.0, 0.3]];
        let y = vec![1.0, 2.5, 2.9, -0.7, 0.4];
        let h = Hyperparams { c: 2.0, epsilon: 0.05 };
        let m = train_svr(&x, &y, h, &opts()).unwrap();
        assert!((m.objective - primal_objective(&x, &y, &m.w, m.b, h)).abs() < 1e-10);
        assert!(m.status.converged);
        assert!(m.trace.windows(2).all(|p| p[1].1 <= p[0].1));
    }

    #[test]
    fn intercept_minimiser() {
        // Residuals 0, 1, 10 with epsilon 0: median minimises |r - b|.
        assert_eq!(best_intercept(&[0.0, 1.0, 10.0], 0.0), 1.0);
        // Even count: any b in [1, 5] is optimal; the mean 4.0 is inside.
        assert_eq!(best_intercept(&[0.0, 1.0, 5.0, 10.0], 0.0), 4.0);
        // Mean outside the optimal interval is clamped to it.
        assert_eq!(best_intercept(&[0.0, 1.0, 2.0, 100.0], 0.0), 2.0);
    }

    #[test]
    fn hyperparams_are_validated() {
        assert!(Hyperparams::new(0.0, 0.1).is_err());
        assert!(Hyperparams::new(1.0, -0.1).is_err());
        assert!(Hyperparams::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn dimension_errors() {
        let h = Hyperparams { c: 1.0, epsilon: 0.1 };
        assert!(matches!(train_svr(&[vec![1.0]], &[1.0, 2.0], h, &opts()), Err(RegressionError::DimensionMismatch(_))));
        assert!(matches!(
            train_svr(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0], h, &opts()),
            Err(RegressionError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn metrics_definitions() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let perfect = fit_metrics(&y, &y, R2Mode::Determination).unwrap();
        assert_eq!(perfect.rmse, 0.0);
        assert_eq!(perfect.r2, 1.0);
        let flat = fit_metrics(&[2.5; 4], &y, R2Mode::Determination).unwrap();
        assert_eq!(flat.r2, 0.0);
        assert_eq!(fit_metrics(&[1.0; 3], &[2.0; 3], R2Mode::Determination), Err(RegressionError::ZeroVariance));
        // Pearson-squared ignores affine bias in the predictions.
        let shifted: Vec<f64> = y.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((fit_metrics(&shifted, &y, R2Mode::PearsonSquared).unwrap().r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn importance_scaling() {
        assert_eq!(scale_0_100(&[2.0, 4.0, 0.0]), vec![50.0, 100.0, 0.0]);
        assert_eq!(scale_0_100(&[0.7]), vec![100.0]);
        let sol = SvrSolution {
            w: vec![2.0, -4.0, 0.0],
            b: 0.0,
            hyper: Hyperparams { c: 1.0, epsilon: 0.1 },
            objective: 0.0,
            status: SolverStatus { iterations: 0, converged: true, relative_gap: 0.0 },
            trace: vec![],
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let imp = importance(&names, &sol, &[], &[], ImportanceMode::Coef).unwrap();
        assert_eq!(imp["a"], 50.0);
        assert_eq!(imp["b"], 100.0);
        assert_eq!(imp["c"], 0.0);
        assert_eq!(importance(&[], &SvrSolution { w: vec![], ..sol }, &[], &[], ImportanceMode::Coef), Err(RegressionError::UntrainedModel));
    }

    #[test]
    fn univariate_mode_prefers_informative_feature() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| 0.5 * (i as f64).powi(2) + 1.0).collect();
        let sol = train_svr(&x, &y, Hyperparams { c: 1.0, epsilon: 0.1 }, &opts()).unwrap();
        let names = vec!["quad".to_string(), "noise".to_string()];
        let imp = importance(&names, &sol, &x, &y, ImportanceMode::UnivariateR2).unwrap();
        assert_eq!(imp["quad"], 100.0);
        assert_eq!(imp["noise"], 0.0);
    }

    #[test]
    fn grid_search_tie_and_single_point() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 3.0 - 1.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0]).collect();
        let single = [Hyperparams { c: 1.0, epsilon: 0.01 }];
        let (best, table) = grid_search(&x, &y, &single, 5, 3, &opts()).unwrap();
        assert_eq!(best, single[0]);
        assert_eq!(table.len(), 1);
        // Both points fit a zero model inside the huge tube: identical RMSE.
        let tied = [Hyperparams { c: 2.0, epsilon: 100.0 }, Hyperparams { c: 1.0, epsilon: 100.0 }];
        let (best, table) = grid_search(&x, &y, &tied, 5, 3, &opts()).unwrap();
        assert_eq!(table[0].mean_rmse.to_bits(), table[1].mean_rmse.to_bits());
        assert_eq!(best.c, 1.0);
        assert!(matches!(grid_search(&x, &y, &[], 5, 3, &opts()), Err(RegressionError::EmptyGrid)));
    }
}
