use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use upho_core::attribution::{Contribution, ShapExplanation};
use upho_core::explain::{Explanation, Pathway, Recommendation, RiskLevel};
use upho_core::graphstore::GraphDocument;
use upho_core::regression::ModelReport;
use upho_core::stats::{CorrelationReport, VifReport};
use upho_core::tabledata::Units;

use crate::config::AnalysisSettings;
use crate::request::{AnalysisRequest, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// One row of the descriptive-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub term: String,
    pub units: Units,
    pub all: MeanSd,
    pub train: MeanSd,
    pub test: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeInfo {
    pub column: String,
    pub term: String,
    /// Node the pathways end at: the disease the outcome indicates, or the
    /// outcome metric itself.
    pub target_node: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub iterations: usize,
    pub derived: Vec<String>,
}

/// Hover texts for every node and edge of the graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub nodes: BTreeMap<String, Explanation>,
    pub edges: BTreeMap<String, Explanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub id: String,
    pub request: AnalysisRequest,
    pub settings: AnalysisSettings,
    /// Fingerprint of the workspace contents the analysis read.
    pub workspace: String,
    pub city: String,
    pub outcome: OutcomeInfo,
    pub descriptive: Vec<ColumnSummary>,
    pub correlation: CorrelationReport,
    pub vif: VifReport,
    pub model: ModelReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shap: Option<ShapExplanation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contributions: Vec<Contribution>,
    pub graph: GraphDocument,
    pub inference: InferenceSummary,
    pub pathways: Vec<Pathway>,
    pub risk_levels: Vec<RiskLevel>,
    pub recommendations: Vec<Recommendation>,
    pub explanations: BTreeMap<Role, ExplanationSet>,
    /// Wall-clock milliseconds per stage; excluded from the id and from
    /// the persisted document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl AnalysisReport {
    /// SHA-256 over the compact serialization with `id` blank and timings
    /// removed.
    pub fn content_id(&self) -> String {
        let mut bare = self.clone();
        bare.id.clear();
        bare.timings = None;
        let bytes = serde_json::to_vec(&bare).expect("report serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The persisted form: pretty JSON without timings.
    pub fn canonical_document(&self) -> Vec<u8> {
        let mut doc = self.clone();
        doc.timings = None;
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn is_patient_level(&self) -> bool {
        self.request.level == crate::request::Level::Patient
    }

    pub fn explanations_for(&self, role: Role) -> Option<&ExplanationSet> {
        self.explanations.get(&role.template_role())
    }
}
