//! The per-tract metrics document served to EHR-style consumers.

use serde::{Deserialize, Serialize};
use upho_core::explain::RiskBand;
use upho_core::stats::average_ranks;
use upho_core::tabledata::{GeoLevel, GeoUnit, Units};

use crate::error::{ErrorKind, Stage, StageError};
use crate::request::{Level, Role};
use crate::store::ReportStore;
use crate::workspace::Workspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub column: String,
    pub term: String,
    pub units: Units,
    pub value: f64,
    pub city_mean: f64,
    /// Within-city percentile of the value, 0 to 100.
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub analysis: String,
    pub outcome: String,
    pub predicted: f64,
    pub percentile: f64,
    pub band: RiskBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub tract: String,
    pub city: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zip: Option<String>,
    pub metrics: Vec<MetricValue>,
    /// Model-based risk of this tract in every stored analysis the role
    /// may see.
    pub risk: Vec<RiskEntry>,
}

pub fn metrics_document(ws: &Workspace, store: &ReportStore, code: &str, role: Role) -> Result<MetricsDocument, StageError> {
    let tract = GeoUnit::new(code, GeoLevel::CensusTract)
        .ok_or_else(|| StageError::invalid(Stage::Request, format!("bad tract code {code:?}")))?;
    let table = ws.table();
    let row_index = table
        .rows()
        .iter()
        .position(|(g, _)| g == &tract)
        .ok_or_else(|| StageError::new(Stage::Request, ErrorKind::NotFound, format!("UnknownTract: {code}")))?;
    let means = table.column_means();
    let n = table.n_rows();
    let metrics = table
        .bindings()
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let col = table.column_at(j);
            let rank = average_ranks(&col)[row_index];
            MetricValue {
                column: b.column_name.clone(),
                term: b.term.clone(),
                units: b.units,
                value: col[row_index],
                city_mean: means[j],
                percentile: if n > 1 { (rank - 1.0) / (n - 1) as f64 * 100.0 } else { 0.0 },
            }
        })
        .collect();
    let mut risk = Vec::new();
    for entry in store.index()? {
        if role == Role::Public && entry.level == Level::Patient {
            continue;
        }
        let report = store.load(&entry.id)?;
        if report.workspace != ws.fingerprint() {
            continue;
        }
        if let Some(r) = report.risk_levels.iter().find(|r| r.tract == tract) {
            risk.push(RiskEntry {
                analysis: report.id.clone(),
                outcome: report.outcome.column.clone(),
                predicted: r.predicted,
                percentile: r.percentile,
                band: r.band,
            });
        }
    }
    Ok(MetricsDocument {
        tract: tract.code().to_string(),
        city: ws.city().to_string(),
        zip: ws.crosswalk().and_then(|c| c.zip_of(&tract)).map(|z| z.code().to_string()),
        metrics,
        risk,
    })
}
