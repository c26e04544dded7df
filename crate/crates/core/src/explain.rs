//! Pathway tracing, hover explanations, risk bands and recommendations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphstore::{provenance_tree, Edge, EvidenceKind, KnowledgeGraph, NodeKind, Origin};
use crate::regression::LinearSvrModel;
use crate::stats::average_ranks;
use crate::tabledata::{FeatureTable, GeoUnit, Units};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error("model has no trained features")]
    UntrainedModel,
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("template line {line}: {message}")]
    Template { line: usize, message: String },
}

pub const DEFAULT_MAX_LEN: usize = 6;

/// Relations a causal pathway may use.
pub const DEFAULT_WHITELIST: [&str; 11] = [
    "livesIn",
    "locatedIn",
    "representsA",
    "hasMetric",
    "hasPhysicalCharacteristic",
    "isPredictorOf",
    "contributesTo",
    "isHealthIndicatorFor",
    "leadsTo",
    "isRiskFactorOf",
    "isExposedTo",
];

pub fn default_whitelist() -> BTreeSet<String> {
    DEFAULT_WHITELIST.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pathway {
    pub edges: Vec<String>,
    pub nodes: Vec<String>,
    pub score: f64,
    pub kind: String,
}

/// Evidence mapped onto [0, 1]; `None` for unscored edges.
pub fn normalized_evidence(edge: &Edge) -> Option<f64> {
    let ev = edge.evidence?;
    let v = match ev.kind {
        EvidenceKind::Importance | EvidenceKind::Prevalence => ev.value / 100.0,
        EvidenceKind::Spearman => ev.value.abs(),
        EvidenceKind::Shap => ev.value.abs() / (1.0 + ev.value.abs()),
    };
    Some(v.clamp(0.0, 1.0))
}

/// Mean normalized evidence, 0.5 for unscored edges.
pub fn pathway_score(edges: &[&Edge]) -> f64 {
    if edges.is_empty() {
        return 0.0;
    }
    edges.iter().map(|e| normalized_evidence(e).unwrap_or(0.5)).sum::<f64>() / edges.len() as f64
}

/// All simple directed paths from `source` to `target` over whitelisted
/// relations with at most `max_len` edges, best score first.
pub fn trace_pathways(
    graph: &KnowledgeGraph,
    source: &str,
    target: &str,
    whitelist: &BTreeSet<String>,
    max_len: usize,
) -> Result<Vec<Pathway>, ExplainError> {
    for n in [source, target] {
        if graph.node(n).is_none() {
            return Err(ExplainError::UnknownNode(n.into()));
        }
    }
    if max_len == 0 {
        return Err(ExplainError::InvalidMaxLen);
    }
    let mut out = Vec::new();
    if source == target {
        return Ok(out);
    }
    let mut adj: BTreeMap<&str, Vec<&Edge>> = BTreeMap::new();
    for e in graph.edges() {
        if whitelist.contains(&e.relation) {
            adj.entry(e.subject.as_str()).or_default().push(e);
        }
    }
    let mut nodes = vec![source];
    let mut path: Vec<&Edge> = Vec::new();
    dfs(&adj, target, max_len, &mut nodes, &mut path, &mut out);
    out.sort_by(|a: &Pathway, b| b.score.total_cmp(&a.score).then_with(|| a.nodes.cmp(&b.nodes)).then_with(|| a.edges.cmp(&b.edges)));
    Ok(out)
}

fn dfs<'a>(
    adj: &BTreeMap<&'a str, Vec<&'a Edge>>,
    target: &str,
    max_len: usize,
    nodes: &mut Vec<&'a str>,
    path: &mut Vec<&'a Edge>,
    out: &mut Vec<Pathway>,
) {
    let here = *nodes.last().expect("path has a start");
    for &e in adj.get(here).map(Vec::as_slice).unwrap_or(&[]) {
        if nodes.contains(&e.object.as_str()) {
            continue;
        }
        path.push(e);
        nodes.push(&e.object);
        if e.object == target {
            out.push(Pathway {
                edges: path.iter().map(|e| e.id.clone()).collect(),
                nodes: nodes.iter().map(|n| n.to_string()).collect(),
                score: pathway_score(path),
                kind: path.iter().map(|e| e.relation.as_str()).collect::<Vec<_>>().join(" -> "),
            });
        } else if path.len() < max_len {
            dfs(adj, target, max_len, nodes, path, out);
        }
        nodes.pop();
        path.pop();
    }
}

/// Checks a pathway against the graph: edges exist, chain from node to
/// node without repeats, and use only whitelisted relations.
pub fn validate_pathway(graph: &KnowledgeGraph, p: &Pathway, whitelist: &BTreeSet<String>) -> Result<(), String> {
    if p.edges.is_empty() || p.nodes.len() != p.edges.len() + 1 {
        return Err("node and edge counts do not chain".into());
    }
    let distinct: BTreeSet<&String> = p.nodes.iter().collect();
    if distinct.len() != p.nodes.len() {
        return Err("pathway revisits a node".into());
    }
    for (i, id) in p.edges.iter().enumerate() {
        let e = graph.edge(id).ok_or_else(|| format!("edge {id} does not exist"))?;
        if e.subject != p.nodes[i] || e.object != p.nodes[i + 1] {
            return Err(format!("edge {id} does not join {} to {}", p.nodes[i], p.nodes[i + 1]));
        }
        if !whitelist.contains(&e.relation) {
            return Err(format!("relation {} is not whitelisted", e.relation));
        }
    }
    Ok(())
}

/// Relation-keyed sentence templates, one `key<TAB>template` per line.
///
/// Keys are relation names, `*` as the relation fallback, `node:<kind>`
/// for node hovers (`node:metric:nostats` without city statistics) and
/// `suffix:<origin>` appended to edge sentences of that origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    entries: BTreeMap<String, String>,
}

const PHYSICIAN_TEMPLATES: &str = include_str!("../resources/templates/physician.tsv");
const RESEARCHER_TEMPLATES: &str = include_str!("../resources/templates/researcher.tsv");

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, ExplainError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, tpl) = line.split_once('\t').ok_or_else(|| ExplainError::Template {
                line: i + 1,
                message: "expected relation<TAB>template".into(),
            })?;
            entries.insert(key.trim().to_string(), tpl.to_string());
        }
        Ok(TemplateSet { entries })
    }

    pub fn physician() -> Self {
        Self::parse(PHYSICIAN_TEMPLATES).expect("bundled templates parse")
    }

    pub fn researcher() -> Self {
        Self::parse(RESEARCHER_TEMPLATES).expect("bundled templates parse")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn relation(&self, rel: &str) -> &str {
        self.get(rel).or_else(|| self.get("*")).unwrap_or("{subject} {relation} {object}.")
    }
}

/// City-wide mean of each metric, keyed by term (`HIO:PctUnderPovertyLine`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CityStats {
    pub means: BTreeMap<String, f64>,
}

impl CityStats {
    pub fn from_table(table: &FeatureTable) -> Self {
        if table.is_empty() {
            return Self::default();
        }
        let means = table.bindings().iter().zip(table.column_means()).map(|(b, m)| (b.term.clone(), m)).collect();
        CityStats { means }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target: String,
    pub text: String,
    pub evidence: Vec<EvidenceItem>,
    pub sources: Vec<String>,
}

/// One decimal place; percent sign or "per thousand" by units.
pub fn format_value(v: f64, units: Option<Units>) -> String {
    match units {
        Some(Units::Percent) => format!("{v:.1}%"),
        Some(Units::RatePer1000) => format!("{v:.1} per thousand"),
        _ => format!("{v:.1}"),
    }
}

/// Number tokens in running text. Digits glued to letters, as in rule ids
/// like `R3` or fact ids like `D12`, are part of a name, not a number.
pub fn numbers_in(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let glued = i > 0 && (chars[i - 1].is_alphanumeric() || chars[i - 1] == '_');
        if chars[i].is_ascii_digit() && !glued {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || (chars[i] == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit))) {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            i += 1;
        }
    }
    out
}

/// Numbers in the text that match no evidence entry.
pub fn untraceable_numbers(expl: &Explanation) -> Vec<String> {
    numbers_in(&expl.text)
        .into_iter()
        .filter(|tok| {
            !expl.evidence.iter().any(|ev| {
                let v = ev.value.abs();
                format!("{v:.1}") == *tok || (v.fract() == 0.0 && format!("{v:.0}") == *tok)
            })
        })
        .collect()
}

fn label_identifiers(label: &str, evidence: &mut Vec<EvidenceItem>) {
    for tok in numbers_in(label) {
        if let Ok(v) = tok.parse::<f64>() {
            evidence.push(EvidenceItem { name: "identifier".into(), value: v });
        }
    }
}

fn position(value: f64, mean: f64) -> &'static str {
    if format!("{value:.1}") == format!("{mean:.1}") {
        "equal to"
    } else if value > mean {
        "above"
    } else {
        "below"
    }
}

struct Fill<'a> {
    pairs: Vec<(&'static str, String)>,
    template: &'a str,
}

impl Fill<'_> {
    fn render(&self) -> String {
        let mut s = self.template.to_string();
        for (k, v) in &self.pairs {
            s = s.replace(&format!("{{{k}}}"), v);
        }
        // Placeholders with nothing to report degrade to "n/a".
        while let Some(a) = s.find('{') {
            match s[a..].find('}') {
                Some(b) => s.replace_range(a..a + b + 1, "n/a"),
                None => break,
            }
        }
        s
    }
}

/// Hover text for a node.
pub fn explain_node(
    graph: &KnowledgeGraph,
    node_id: &str,
    city: &CityStats,
    templates: &TemplateSet,
) -> Result<Explanation, ExplainError> {
    let n = graph.node(node_id).ok_or_else(|| ExplainError::UnknownNode(node_id.into()))?;
    let mut evidence = Vec::new();
    label_identifiers(&n.label, &mut evidence);
    let mut pairs = vec![
        ("subject", n.label.clone()),
        ("ns", n.term.namespace.clone()),
        ("type", n.term.name.clone()),
    ];
    let mut sources = vec![format!("ontology:{}", n.term.namespace)];
    let key = match (n.kind, n.value) {
        (NodeKind::Metric | NodeKind::Literal, Some(v)) => {
            evidence.push(EvidenceItem { name: "value".into(), value: v });
            pairs.push(("value", format_value(v, n.units)));
            match city.means.get(&n.term.key()) {
                Some(&mean) if n.kind == NodeKind::Metric => {
                    evidence.push(EvidenceItem { name: "city_mean".into(), value: mean });
                    pairs.push(("city_mean", format_value(mean, n.units)));
                    pairs.push(("position", position(v, mean).into()));
                    sources.push("data:city_mean".into());
                    "node:metric"
                }
                _ if n.kind == NodeKind::Metric => "node:metric:nostats",
                _ => "node:literal",
            }
        }
        (NodeKind::Concept, _) => "node:concept",
        _ => "node:instance",
    };
    let template = templates.get(key).unwrap_or("{subject}.");
    let text = Fill { pairs, template }.render();
    Ok(Explanation { target: node_id.into(), text, evidence, sources })
}

/// Hover text for an edge.
pub fn explain_edge(
    graph: &KnowledgeGraph,
    edge_id: &str,
    city: &CityStats,
    templates: &TemplateSet,
) -> Result<Explanation, ExplainError> {
    let e = graph.edge(edge_id).ok_or_else(|| ExplainError::UnknownEdge(edge_id.into()))?;
    let s = graph.node(&e.subject).ok_or_else(|| ExplainError::UnknownNode(e.subject.clone()))?;
    let o = graph.node(&e.object).ok_or_else(|| ExplainError::UnknownNode(e.object.clone()))?;
    let mut evidence = Vec::new();
    label_identifiers(&s.label, &mut evidence);
    label_identifiers(&o.label, &mut evidence);
    let mut pairs = vec![
        ("subject", s.label.clone()),
        ("object", o.label.clone()),
        ("relation", e.relation.clone()),
        ("ns", o.term.namespace.clone()),
    ];
    let mut sources = Vec::new();
    // The quantity a sentence reports: the edge score, else a metric value.
    let valued = [o, s].into_iter().find(|n| n.value.is_some());
    if let Some(ev) = e.evidence {
        let name = match ev.kind {
            EvidenceKind::Importance => "importance",
            EvidenceKind::Shap => "shap",
            EvidenceKind::Spearman => "spearman",
            EvidenceKind::Prevalence => "prevalence",
        };
        evidence.push(EvidenceItem { name: name.into(), value: ev.value });
        let units = (ev.kind == EvidenceKind::Prevalence).then_some(Units::Percent);
        pairs.push(("value", format_value(ev.value, units)));
    } else if let Some(n) = valued {
        let v = n.value.expect("valued node");
        evidence.push(EvidenceItem { name: "value".into(), value: v });
        pairs.push(("value", format_value(v, n.units)));
    }
    if let Some(n) = valued {
        if let Some(&mean) = city.means.get(&n.term.key()) {
            evidence.push(EvidenceItem { name: "city_mean".into(), value: mean });
            pairs.push(("city_mean", format_value(mean, n.units)));
            pairs.push(("position", position(n.value.expect("valued node"), mean).into()));
        }
    }
    let mut text = Fill { pairs: pairs.clone(), template: templates.relation(&e.relation) }.render();
    match e.origin {
        Origin::Inferred => {
            let tree = provenance_tree(graph, &e.id).map_err(|_| ExplainError::UnknownEdge(e.id.clone()))?;
            let chain: Vec<String> = tree.ids().into_iter().filter(|id| *id != e.id).collect();
            let rules: Vec<String> = e.derivations.iter().map(|d| d.rule.clone()).collect::<BTreeSet<_>>().into_iter().collect();
            pairs.push(("rules", rules.join(", ")));
            pairs.push(("premises", chain.join(", ")));
            sources.extend(chain.iter().filter(|id| graph.edge(id).is_none()).cloned());
            for r in &rules {
                if !sources.contains(r) {
                    sources.push(r.clone());
                }
            }
        }
        Origin::MlDerived => sources.push("model:linear_svr".into()),
        Origin::DataEvidence => sources.push("data:feature_table".into()),
        Origin::Asserted => sources.push(format!("fact:{}", e.id)),
    }
    if e.relation == crate::ontology::ISA {
        sources.push(format!("ontology:{}", o.term.namespace));
    }
    if let Some(suffix) = templates.get(&format!("suffix:{}", e.origin.as_str())) {
        text.push(' ');
        text.push_str(&Fill { pairs, template: suffix }.render());
    }
    Ok(Explanation { target: edge_id.into(), text, evidence, sources })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskBand {
    Low,
    Medium,
    High,
}

impl RiskBand {
    pub fn of(percentile: f64) -> Self {
        if percentile < 33.33 {
            RiskBand::Low
        } else if percentile >= 66.67 {
            RiskBand::High
        } else {
            RiskBand::Medium
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskLevel {
    pub tract: GeoUnit,
    pub predicted: f64,
    pub percentile: f64,
    pub band: RiskBand,
}

/// Within-city percentile of each tract's predicted outcome:
/// `(rank − 1)/(n − 1)·100` with average ranks for ties.
pub fn risk_levels(table: &FeatureTable, model: &LinearSvrModel) -> Result<Vec<RiskLevel>, ExplainError> {
    if model.features.is_empty() || model.w.is_empty() {
        return Err(ExplainError::UntrainedModel);
    }
    let cols = model
        .features
        .iter()
        .map(|f| table.column_index(f).ok_or_else(|| ExplainError::FeatureMismatch(format!("table lacks {f:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let preds: Vec<f64> = table
        .rows()
        .iter()
        .map(|(_, row)| model.predict_raw(&cols.iter().map(|&j| row[j]).collect::<Vec<_>>()))
        .collect();
    let n = preds.len();
    let ranks = average_ranks(&preds);
    Ok(table
        .rows()
        .iter()
        .zip(preds.iter().zip(ranks))
        .map(|((g, _), (&predicted, rank))| {
            let percentile = if n > 1 { (rank - 1.0) / (n - 1) as f64 * 100.0 } else { 0.0 };
            RiskLevel { tract: g.clone(), predicted, percentile, band: RiskBand::of(percentile) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub edge: String,
    pub relation: String,
    pub object: String,
    pub score: f64,
    pub pathway: Option<Pathway>,
    pub provenance: Vec<String>,
    pub explanation: Explanation,
}

/// Inferred `should…` edges from the subject, strongest supporting
/// pathway first.
pub fn recommendations(
    graph: &KnowledgeGraph,
    subject: &str,
    whitelist: &BTreeSet<String>,
    city: &CityStats,
    templates: &TemplateSet,
) -> Vec<Recommendation> {
    let mut out: Vec<Recommendation> = graph
        .edges()
        .iter()
        .filter(|e| e.origin == Origin::Inferred && e.subject == subject && e.relation.starts_with("should"))
        .filter_map(|e| {
            let best = trace_pathways(graph, subject, &e.object, whitelist, DEFAULT_MAX_LEN).ok()?.into_iter().next();
            let provenance = provenance_tree(graph, &e.id).ok()?.ids();
            Some(Recommendation {
                edge: e.id.clone(),
                relation: e.relation.clone(),
                object: e.object.clone(),
                score: best.as_ref().map_or(0.0, |p| p.score),
                pathway: best,
                provenance,
                explanation: explain_edge(graph, &e.id, city, templates).ok()?,
            })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.object.cmp(&b.object)).then_with(|| a.edge.cmp(&b.edge)));
    out
}
