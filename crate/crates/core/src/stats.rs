//! Feature screening and preprocessing: Spearman correlation, VIF
//! multicollinearity filtering, standardisation and seeded splitting.
//!
//! Splits and folds draw from a PCG-XSL-RR 128/64 MCG generator
//! (`rand_pcg::Pcg64Mcg`) seeded with `SeedableRng::seed_from_u64`, and
//! shuffle with a Fisher–Yates pass whose bounded draws use the widening
//! multiply `(next_u64() as u128 * bound) >> 64`. Both steps are fixed here so
//! that a seed names the same partition on every platform.

use std::collections::BTreeMap;

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::tabledata::{FeatureTable, TableError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("input vector is constant")]
    ConstantInput,
    #[error("column {0:?} is constant")]
    ConstantColumn(String),
    #[error("singular design: column {0:?} is a linear combination of the others")]
    SingularDesign(String),
    #[error("insufficient rows: {rows} rows for {cols} columns")]
    InsufficientRows { rows: usize, cols: usize },
    #[error("need at least two candidate columns")]
    TooFewColumns,
    #[error("too few rows to split: {0}")]
    TooFewRows(usize),
    #[error("k = {k} exceeds the {rows} available rows")]
    KTooLarge { k: usize, rows: usize },
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Average ranks (1-based); tied values share the mean of their rank span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooShort { needed: 3, got: x.len() });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub target: String,
    pub rho: BTreeMap<String, f64>,
}

/// Spearman rho of every column in `candidates` against `target`.
pub fn correlation_report(
    table: &FeatureTable,
    target: &str,
    candidates: &[&str],
) -> Result<CorrelationReport, StatsError> {
    let y = table.column(target)?;
    let mut rho = BTreeMap::new();
    for &c in candidates.iter().filter(|c| **c != target) {
        let x = table.column(c)?;
        let r = spearman(&x, &y).map_err(|e| match e {
            StatsError::ConstantInput => StatsError::ConstantColumn(c.to_string()),
            other => other,
        })?;
        rho.insert(c.to_string(), r);
    }
    Ok(CorrelationReport { target: target.to_string(), rho })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifRound {
    pub vif: BTreeMap<String, f64>,
    pub removed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifReport {
    /// VIF of every candidate before any removal.
    pub vif: BTreeMap<String, f64>,
    pub threshold: f64,
    /// Columns dropped, in removal order.
    pub removed: Vec<String>,
    pub kept: Vec<String>,
    /// One entry per recomputation.
    pub trace: Vec<VifRound>,
}

pub const DEFAULT_VIF_THRESHOLD: f64 = 10.0;

/// VIF of each column against the others: regress it on the rest with an
/// intercept and take `1 / (1 - R²)`.
pub fn vif_values(columns: &[(String, Vec<f64>)]) -> Result<Vec<f64>, StatsError> {
    if columns.len() < 2 {
        return Err(StatsError::TooFewColumns);
    }
    let rows = columns[0].1.len();
    if rows <= columns.len() {
        return Err(StatsError::InsufficientRows { rows, cols: columns.len() });
    }
    // Centring first keeps the normal matrix well scaled; the intercept
    // column remains in the fit.
    let centred: Vec<Vec<f64>> = columns
        .iter()
        .map(|(_, c)| {
            let m = c.iter().sum::<f64>() / rows as f64;
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(columns.len());
    for j in 0..columns.len() {
        let name = &columns[j].0;
        if centred[j].iter().all(|v| *v == 0.0) {
            return Err(StatsError::ConstantColumn(name.clone()));
        }
        let others: Vec<Vec<f64>> =
            centred.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.clone()).collect();
        let (_, r2) = linalg::ols_r2(&others, &centred[j]).ok_or_else(|| StatsError::SingularDesign(name.clone()))?;
        if r2 >= 1.0 - 1e-12 {
            return Err(StatsError::SingularDesign(name.clone()));
        }
        out.push(1.0 / (1.0 - r2.max(0.0)));
    }
    Ok(out)
}

/// Iterative VIF filter: while the worst column exceeds `threshold`, drop it
/// and recompute. Ties on the worst value drop the column named first.
pub fn vif(table: &FeatureTable, candidates: &[&str], threshold: f64) -> Result<VifReport, StatsError> {
    let mut current: Vec<(String, Vec<f64>)> =
        candidates.iter().map(|c| Ok((c.to_string(), table.column(c)?))).collect::<Result<_, TableError>>()?;
    let mut trace = Vec::new();
    let mut removed = Vec::new();
    loop {
        let values = vif_values(&current)?;
        let map: BTreeMap<String, f64> = current.iter().map(|(n, _)| n.clone()).zip(values.iter().copied()).collect();
        let worst = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > threshold)
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        match worst {
            Some(i) if current.len() > 2 => {
                let (name, _) = current.remove(i);
                trace.push(VifRound { vif: map, removed: Some(name.clone()) });
                removed.push(name);
            }
            _ => {
                trace.push(VifRound { vif: map, removed: None });
                break;
            }
        }
    }
    Ok(VifReport {
        vif: trace[0].vif.clone(),
        threshold,
        removed,
        kept: current.into_iter().map(|(n, _)| n).collect(),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub columns: Vec<String>,
    pub mu: Vec<f64>,
    /// Sample standard deviations (n − 1 denominator).
    pub sigma: Vec<f64>,
}

impl StandardizationParams {
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mu.iter().zip(&self.sigma)).map(|(x, (m, s))| (x - m) / s).collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mu.iter().zip(&self.sigma)).map(|(z, (m, s))| z * s + m).collect()
    }

    pub fn index_of(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }
}

/// Mean and sample standard deviation of one vector.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn fit_standardization(table: &FeatureTable) -> Result<StandardizationParams, StatsError> {
    if table.n_rows() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: table.n_rows() });
    }
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for (j, b) in table.bindings().iter().enumerate() {
        let (m, s) = mean_sd(&table.column_at(j));
        if !(s > 0.0) {
            return Err(StatsError::ConstantColumn(b.column_name.clone()));
        }
        mu.push(m);
        sigma.push(s);
    }
    Ok(StandardizationParams { columns: table.column_names().iter().map(|s| s.to_string()).collect(), mu, sigma })
}

pub fn apply_standardization(table: &FeatureTable, params: &StandardizationParams) -> Result<FeatureTable, StatsError> {
    let values = table.rows().iter().map(|(_, v)| params.transform(v)).collect();
    Ok(table.with_values(values)?)
}

/// Standardises every column to mean 0 and sample sd 1.
pub fn standardize(table: &FeatureTable) -> Result<(FeatureTable, StandardizationParams), StatsError> {
    let params = fit_standardization(table)?;
    Ok((apply_standardization(table, &params)?, params))
}

pub fn inverse_standardize(table: &FeatureTable, params: &StandardizationParams) -> Result<FeatureTable, StatsError> {
    let values = table.rows().iter().map(|(_, v)| params.inverse(v)).collect();
    Ok(table.with_values(values)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.85, k: 5, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(StatsError::InvalidSpec(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.k < 2 {
            return Err(StatsError::InvalidSpec(format!("k = {} < 2", self.k)));
        }
        Ok(())
    }
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((u128::from(rng.next_u64()) * (i as u128 + 1)) >> 64) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Train/test row indices, each sorted ascending.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), StatsError> {
    spec.validate()?;
    if n < 10 {
        return Err(StatsError::TooFewRows(n));
    }
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let idx = shuffled_indices(n, spec.seed);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded train/test partition; both halves keep the original row order.
pub fn split(table: &FeatureTable, spec: &SplitSpec) -> Result<(FeatureTable, FeatureTable), StatsError> {
    let (train, test) = split_indices(table.n_rows(), spec)?;
    Ok((table.take_rows(&train), table.take_rows(&test)))
}

/// `k` (fit, validation) index pairs over `n` rows. Validation sets partition
/// the rows and differ in size by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, StatsError> {
    if k < 2 {
        return Err(StatsError::InvalidSpec(format!("k = {k} < 2")));
    }
    if k > n {
        return Err(StatsError::KTooLarge { k, rows: n });
    }
    let idx = shuffled_indices(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut val = idx[start..start + size].to_vec();
        val.sort_unstable();
        let mut fit: Vec<usize> = idx[..start].iter().chain(&idx[start + size..]).copied().collect();
        fit.sort_unstable();
        folds.push((fit, val));
        start += size;
    }
    Ok(folds)
}

pub fn kfold(table: &FeatureTable, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, StatsError> {
    kfold_indices(table.n_rows(), k, seed)
}
