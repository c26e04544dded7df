//! Exact SHAP values for the linear SVR.
//!
//! For a linear model with independent features the Shapley value of
//! feature j is `w̃ⱼ (xⱼ − μⱼ)`, where `w̃` is the weight on the raw feature
//! scale and `μ` the background mean, so `baseline + Σ φ = prediction`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::LinearSvrModel;
use crate::tabledata::{FeatureTable, GeoUnit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("background table is empty")]
    EmptyBackground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub subject: GeoUnit,
    pub phi: BTreeMap<String, f64>,
    pub baseline: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
    Neutral,
}

/// One bar of the contribution plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub phi: f64,
    pub direction: Direction,
}

/// Background means of the model features, in model feature order.
pub fn background_means(model: &LinearSvrModel, background: &FeatureTable) -> Result<Vec<f64>, AttributionError> {
    if background.is_empty() {
        return Err(AttributionError::EmptyBackground);
    }
    let means = background.column_means();
    model
        .features
        .iter()
        .map(|f| {
            background
                .column_index(f)
                .map(|j| means[j])
                .ok_or_else(|| AttributionError::FeatureMismatch(format!("background lacks feature {f:?}")))
        })
        .collect()
}

/// SHAP values of a raw feature vector `x` (model feature order).
pub fn shap_explain(
    model: &LinearSvrModel,
    subject: GeoUnit,
    x: &[f64],
    background: &FeatureTable,
) -> Result<ShapExplanation, AttributionError> {
    if x.len() != model.n_features() {
        return Err(AttributionError::FeatureMismatch(format!(
            "{} values for {} model features",
            x.len(),
            model.n_features()
        )));
    }
    let mu = background_means(model, background)?;
    let raw_w = model.raw_weights();
    let phi: BTreeMap<String, f64> = model
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| (f.clone(), raw_w[j] * (x[j] - mu[j])))
        .collect();
    let baseline = model.predict_raw(&mu);
    let prediction = model.predict_raw(x);
    Ok(ShapExplanation { subject, phi, baseline, prediction })
}

/// Explains a table row identified by its geographic code.
pub fn shap_explain_row(
    model: &LinearSvrModel,
    table: &FeatureTable,
    code: &str,
    background: &FeatureTable,
) -> Result<ShapExplanation, AttributionError> {
    let (geo, _) = table
        .rows()
        .iter()
        .find(|(g, _)| g.code() == code)
        .ok_or_else(|| AttributionError::FeatureMismatch(format!("no row for {code}")))?;
    let x = model
        .features
        .iter()
        .map(|f| {
            table
                .column_index(f)
                .and_then(|j| table.row_by_code(code).map(|r| r[j]))
                .ok_or_else(|| AttributionError::FeatureMismatch(format!("table lacks feature {f:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    shap_explain(model, geo.clone(), &x, background)
}

/// Contributions by descending |φ|, ties by feature name.
pub fn rank_contributions(expl: &ShapExplanation) -> Vec<Contribution> {
    let mut out: Vec<Contribution> = expl
        .phi
        .iter()
        .map(|(f, &phi)| Contribution {
            feature: f.clone(),
            phi,
            direction: match phi.partial_cmp(&0.0) {
                Some(Ordering::Greater) => Direction::Increase,
                Some(Ordering::Less) => Direction::Decrease,
                _ => Direction::Neutral,
            },
        })
        .collect();
    out.sort_by(|a, b| b.phi.abs().total_cmp(&a.phi.abs()).then_with(|| a.feature.cmp(&b.feature)));
    out
}
