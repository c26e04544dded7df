//! Knowledge graph over ontology terms: typed nodes, labelled edges with
//! evidence, and a forward-chaining reasoner that records provenance for
//! every derived edge.
//!
//! Matching semantics used by [`infer`]:
//!
//! * A body atom `s rel o` holds for nodes `(a, b)` when there is an edge
//!   `a rel b` (cited as a premise), or when `a` is not a concept node,
//!   `b` is a concept node and some concept node `c` with `term(a) ⊑ term(c)`
//!   has an edge `c rel b`. The second case is type inheritance and is not
//!   cited, the way a textbook derivation does not cite "a tract's poverty
//!   metric measures poverty".
//! * A constant in a body atom matches any node whose term it subsumes.
//!   A constant in a head resolves to the concept node of that term.
//! * `value(?m)` reads the node value, `threshold(?r)` the graph threshold
//!   registered for the node's term. Missing numbers fail the guard.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::ShapExplanation;
use crate::ontology::{Arg, Atom, GuardRhs, Ontology, RuleAxiom, Term, ISA};
use crate::regression::ModelReport;
use crate::tabledata::{FeatureTable, GeoUnit, Units, ZipTractCrosswalk};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("tract {0} is not in the table")]
    UnknownTract(String),
    #[error("tract {0} is not in the table")]
    TractNotInTable(String),
    #[error("feature {0:?} has no metric node in the graph")]
    UnmappedFeature(String),
    #[error("inference exceeded the iteration cap of {cap}")]
    InferenceOverflow { cap: usize },
    #[error("unknown fact {0}")]
    UnknownFact(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} already exists with different content")]
    ConflictingNode(String),
    #[error("fact id {0} is already used")]
    DuplicateFactId(String),
    #[error("relation {0} is not declared in the ontology")]
    UndeclaredRelation(String),
    #[error("bad term {0:?}")]
    BadTerm(String),
    #[error("facts line {line}: {message}")]
    FactsSyntax { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Concept,
    Instance,
    Metric,
    Literal,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Concept => "concept",
            NodeKind::Instance => "instance",
            NodeKind::Metric => "metric",
            NodeKind::Literal => "literal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub label: String,
    pub term: Term,
    pub kind: NodeKind,
    pub value: Option<f64>,
    pub units: Option<Units>,
}

impl Node {
    pub fn concept(term: &Term) -> Self {
        Node {
            id: term.key(),
            label: term.name.clone(),
            term: term.clone(),
            kind: NodeKind::Concept,
            value: None,
            units: None,
        }
    }

    pub fn instance(id: &str, label: &str, term: &Term) -> Self {
        Node { id: id.into(), label: label.into(), term: term.clone(), kind: NodeKind::Instance, value: None, units: None }
    }

    pub fn metric(id: &str, label: &str, term: &Term, value: f64, units: Units) -> Self {
        Node {
            id: id.into(),
            label: label.into(),
            term: term.clone(),
            kind: NodeKind::Metric,
            value: Some(value),
            units: Some(units),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Asserted,
    DataEvidence,
    MlDerived,
    Inferred,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Asserted => "asserted",
            Origin::DataEvidence => "data_evidence",
            Origin::MlDerived => "ml_derived",
            Origin::Inferred => "inferred",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asserted" => Ok(Origin::Asserted),
            "data_evidence" => Ok(Origin::DataEvidence),
            "ml_derived" => Ok(Origin::MlDerived),
            "inferred" => Ok(Origin::Inferred),
            other => Err(format!("unknown origin {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Importance,
    Shap,
    Spearman,
    Prevalence,
}

impl std::str::FromStr for EvidenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "importance" => Ok(EvidenceKind::Importance),
            "shap" => Ok(EvidenceKind::Shap),
            "spearman" => Ok(EvidenceKind::Spearman),
            "prevalence" => Ok(EvidenceKind::Prevalence),
            other => Err(format!("unknown evidence kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub kind: EvidenceKind,
    pub value: f64,
}

/// One way an inferred edge was derived: a rule and the cited edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Derivation {
    pub rule: String,
    pub premises: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub origin: Origin,
    pub evidence: Option<Evidence>,
    pub derivations: Vec<Derivation>,
}

impl Edge {
    /// Rule and fact ids of all derivations, first occurrence order.
    pub fn provenance(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for d in &self.derivations {
            for id in std::iter::once(&d.rule).chain(&d.premises) {
                if seen.insert(id.clone()) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    pub fn triple(&self) -> (&str, &str, &str) {
        (&self.subject, &self.relation, &self.object)
    }
}

/// Who the graph is about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "level")]
pub enum Subject {
    Patient { tract: GeoUnit },
    Population { city: String },
}

pub const PATIENT_NODE: &str = "patient";
pub const POPULATION_NODE: &str = "population";

pub fn tract_node_id(code: &str) -> String {
    format!("tract:{code}")
}

pub fn zip_node_id(code: &str) -> String {
    format!("zip:{code}")
}

pub fn city_node_id(name: &str) -> String {
    format!("city:{name}")
}

pub fn neighborhood_node_id(code: &str) -> String {
    format!("neighborhood:{code}")
}

/// Metric node for `column` measured on a region (`tract:…` or `city:…`).
pub fn metric_node_id(region: &str, column: &str) -> String {
    let code = region.split_once(':').map_or(region, |(_, c)| c);
    format!("metric:{code}:{column}")
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    ontology: Arc<Ontology>,
    nodes: Vec<Node>,
    node_index: HashMap<String, usize>,
    edges: Vec<Edge>,
    edge_index: HashMap<String, usize>,
    triple_index: HashMap<(String, String, String), usize>,
    next_fact: usize,
    next_derived: usize,
    thresholds: BTreeMap<String, f64>,
    at_fixpoint: bool,
    subject: Option<String>,
    region: Option<String>,
}

impl KnowledgeGraph {
    pub fn new(ontology: Arc<Ontology>) -> Self {
        KnowledgeGraph {
            ontology,
            nodes: Vec::new(),
            node_index: HashMap::new(),
            edges: Vec::new(),
            edge_index: HashMap::new(),
            triple_index: HashMap::new(),
            next_fact: 1,
            next_derived: 1,
            thresholds: BTreeMap::new(),
            at_fixpoint: false,
            subject: None,
            region: None,
        }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn ontology_arc(&self) -> Arc<Ontology> {
        self.ontology.clone()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edge_index.get(id).map(|&i| &self.edges[i])
    }

    pub fn find_edge(&self, subject: &str, relation: &str, object: &str) -> Option<&Edge> {
        self.triple_index
            .get(&(subject.to_string(), relation.to_string(), object.to_string()))
            .map(|&i| &self.edges[i])
    }

    pub fn thresholds(&self) -> &BTreeMap<String, f64> {
        &self.thresholds
    }

    pub fn set_threshold(&mut self, term: &Term, value: f64) {
        self.thresholds.insert(term.key(), value);
        self.at_fixpoint = false;
    }

    pub fn is_at_fixpoint(&self) -> bool {
        self.at_fixpoint
    }

    /// Node id of the patient or population the graph describes.
    pub fn subject(&self) -> Option<&str> {
        self.subject.as_deref()
    }

    /// Region whose metrics were attached (tract or city node id).
    pub fn region(&self) -> Option<&str> {
        self.region.as_deref()
    }

    /// Adds a node, or returns quietly if an identical node exists.
    pub fn add_node(&mut self, node: Node) -> Result<(), GraphError> {
        if let Some(existing) = self.node(&node.id) {
            return if *existing == node { Ok(()) } else { Err(GraphError::ConflictingNode(node.id)) };
        }
        self.node_index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
        self.at_fixpoint = false;
        Ok(())
    }

    /// Concept node for a declared term, created on first use.
    pub fn ensure_concept(&mut self, term: &Term) -> Option<String> {
        if !self.ontology.has_concept(term) {
            return None;
        }
        let id = term.key();
        if self.node(&id).is_none() {
            self.add_node(Node::concept(term)).ok()?;
        }
        Some(id)
    }

    fn check_relation(&self, relation: &str) -> Result<(), GraphError> {
        // Graphs built over an empty ontology are untyped.
        if self.ontology.has_relation(relation) || self.ontology.relations().is_empty() {
            Ok(())
        } else {
            Err(GraphError::UndeclaredRelation(relation.into()))
        }
    }

    fn push_edge(&mut self, edge: Edge) {
        let i = self.edges.len();
        self.edge_index.insert(edge.id.clone(), i);
        self.triple_index
            .insert((edge.subject.clone(), edge.relation.clone(), edge.object.clone()), i);
        self.edges.push(edge);
        self.at_fixpoint = false;
    }

    /// Asserts `subject relation object` with a freshly minted `F<n>` id.
    /// An existing identical triple is returned unchanged.
    pub fn assert_fact(
        &mut self,
        subject: &str,
        relation: &str,
        object: &str,
        origin: Origin,
        evidence: Option<Evidence>,
    ) -> Result<String, GraphError> {
        let id = loop {
            let id = format!("F{}", self.next_fact);
            self.next_fact += 1;
            if !self.edge_index.contains_key(&id) {
                break id;
            }
        };
        self.assert_fact_with_id(&id, subject, relation, object, origin, evidence)
    }

    /// Like [`assert_fact`](Self::assert_fact) with a caller-chosen id.
    pub fn assert_fact_with_id(
        &mut self,
        id: &str,
        subject: &str,
        relation: &str,
        object: &str,
        origin: Origin,
        evidence: Option<Evidence>,
    ) -> Result<String, GraphError> {
        self.check_relation(relation)?;
        for n in [subject, object] {
            if self.node(n).is_none() {
                return Err(GraphError::UnknownNode(n.into()));
            }
        }
        if let Some(e) = self.find_edge(subject, relation, object) {
            return Ok(e.id.clone());
        }
        if self.edge_index.contains_key(id) {
            return Err(GraphError::DuplicateFactId(id.into()));
        }
        if let Some(n) = id.strip_prefix('F').and_then(|n| n.parse::<usize>().ok()) {
            self.next_fact = self.next_fact.max(n + 1);
        }
        self.push_edge(Edge {
            id: id.into(),
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            origin,
            evidence,
            derivations: Vec::new(),
        });
        Ok(id.into())
    }

    /// Creates concept nodes for every term named in a ground axiom.
    pub fn add_axiom_concepts(&mut self) {
        let ont = self.ontology.clone();
        for r in ont.rules().iter().filter(|r| r.is_ground_axiom()) {
            for a in [&r.head.subject, &r.head.object] {
                if let Arg::Const(t) = a {
                    self.ensure_concept(t);
                }
            }
        }
    }

    fn add_typed_instance(&mut self, id: &str, label: &str, type_name: &str) -> Result<(), GraphError> {
        let term = Term::parse(type_name).ok_or_else(|| GraphError::BadTerm(type_name.into()))?;
        self.add_node(Node::instance(id, label, &term))?;
        if let Some(type_id) = self.ensure_concept(&term) {
            self.assert_fact(id, ISA, &type_id, Origin::Asserted, None)?;
        }
        Ok(())
    }

    fn ensure_tract(&mut self, tract: &GeoUnit) -> Result<String, GraphError> {
        let id = tract_node_id(tract.code());
        if self.node(&id).is_none() {
            self.add_typed_instance(&id, tract.short_tract(), "GISO:CensusTract")?;
        }
        Ok(id)
    }

    fn relation_known(&self, relation: &str) -> bool {
        self.ontology.has_relation(relation) || self.ontology.relations().is_empty()
    }
}

/// Step one: the subject, its geography and the concept layer.
pub fn seed_graph(
    ont: Arc<Ontology>,
    subject: &Subject,
    table: Option<&FeatureTable>,
    crosswalk: Option<&ZipTractCrosswalk>,
) -> Result<KnowledgeGraph, GraphError> {
    let mut g = KnowledgeGraph::new(ont);
    match subject {
        Subject::Patient { tract } => {
            if let Some(t) = table {
                if t.row_by_code(tract.code()).is_none() {
                    return Err(GraphError::UnknownTract(tract.code().into()));
                }
            }
            let patient = Term::new("ACESO", "Patient");
            g.add_node(Node::instance(PATIENT_NODE, "Patient", &patient))?;
            let tract_id = tract_node_id(tract.code());
            let tract_term = Term::new("GISO", "CensusTract");
            g.add_node(Node::instance(&tract_id, tract.short_tract(), &tract_term))?;
            g.assert_fact(PATIENT_NODE, "livesIn", &tract_id, Origin::Asserted, None)?;
            for (id, term) in [(PATIENT_NODE, &patient), (tract_id.as_str(), &tract_term)] {
                if let Some(type_id) = g.ensure_concept(term) {
                    g.assert_fact(id, ISA, &type_id, Origin::Asserted, None)?;
                }
            }
            if g.relation_known("representsA") {
                let nb = neighborhood_node_id(tract.code());
                g.add_typed_instance(&nb, &format!("Neighborhood {}", tract.short_tract()), "GISO:Neighborhood")?;
                g.assert_fact(&tract_id, "representsA", &nb, Origin::Asserted, None)?;
            }
            if let (Some(cw), true) = (crosswalk, g.relation_known("partOf")) {
                if let Some(zip) = cw.zip_of(tract) {
                    let zid = zip_node_id(zip.code());
                    g.add_typed_instance(&zid, zip.code(), "GISO:ZipCode")?;
                    g.assert_fact(&tract_id, "partOf", &zid, Origin::Asserted, None)?;
                }
            }
            g.subject = Some(PATIENT_NODE.into());
        }
        Subject::Population { city } => {
            let pop = Term::new("ACESO", "Population");
            g.add_node(Node::instance(POPULATION_NODE, "Population", &pop))?;
            let cid = city_node_id(city);
            let city_term = Term::new("GISO", "City");
            g.add_node(Node::instance(&cid, city, &city_term))?;
            g.assert_fact(POPULATION_NODE, "locatedIn", &cid, Origin::Asserted, None)?;
            for (id, term) in [(POPULATION_NODE, &pop), (cid.as_str(), &city_term)] {
                if let Some(type_id) = g.ensure_concept(term) {
                    g.assert_fact(id, ISA, &type_id, Origin::Asserted, None)?;
                }
            }
            g.subject = Some(POPULATION_NODE.into());
        }
    }
    g.add_axiom_concepts();
    Ok(g)
}

/// Registers per-term guard thresholds from city means: each column term
/// gets its mean, and so does every risk concept the term indicates.
pub fn set_city_thresholds(graph: &mut KnowledgeGraph, table: &FeatureTable) -> Result<(), GraphError> {
    if table.is_empty() {
        return Ok(());
    }
    let means = table.column_means();
    let ont = graph.ontology_arc();
    for (b, mean) in table.bindings().iter().zip(means) {
        let term = Term::parse(&b.term).ok_or_else(|| GraphError::BadTerm(b.term.clone()))?;
        graph.set_threshold(&term, mean);
        for r in ont.rules().iter().filter(|r| r.is_ground_axiom() && r.head.relation == "indicatorOfRisk") {
            if let (Arg::Const(a), Arg::Const(risk)) = (&r.head.subject, &r.head.object) {
                if ont.is_subsumed(&term, a) {
                    graph.set_threshold(risk, mean);
                }
            }
        }
    }
    Ok(())
}

fn attach_values(
    graph: &mut KnowledgeGraph,
    table: &FeatureTable,
    region: &str,
    values: &[f64],
) -> Result<Vec<String>, GraphError> {
    let ont = graph.ontology_arc();
    let mut ids = Vec::new();
    for (b, &v) in table.bindings().iter().zip(values) {
        let term = Term::parse(&b.term).ok_or_else(|| GraphError::BadTerm(b.term.clone()))?;
        let mid = metric_node_id(region, &b.column_name);
        graph.add_node(Node::metric(&mid, &term.name, &term, v, b.units))?;
        let evidence = (b.units == Units::Percent).then_some(Evidence { kind: EvidenceKind::Prevalence, value: v });
        ids.push(graph.assert_fact(region, "hasMetric", &mid, Origin::DataEvidence, evidence)?);
        if !graph.relation_known("isHealthIndicatorFor") {
            continue;
        }
        for r in ont.rules().iter().filter(|r| r.is_ground_axiom() && r.head.relation == "isHealthIndicatorFor") {
            if let (Arg::Const(a), Arg::Const(disease)) = (&r.head.subject, &r.head.object) {
                if ont.is_subsumed(&term, a) {
                    if let Some(did) = graph.ensure_concept(disease) {
                        ids.push(graph.assert_fact(&mid, "isHealthIndicatorFor", &did, Origin::DataEvidence, None)?);
                    }
                }
            }
        }
    }
    set_city_thresholds(graph, table)?;
    graph.region = Some(region.to_string());
    Ok(ids)
}

/// Step two: metric nodes for a tract row, `hasMetric` edges from the tract
/// and `isHealthIndicatorFor` edges licensed by ground axioms. Idempotent.
pub fn attach_evidence(graph: &mut KnowledgeGraph, table: &FeatureTable, tract: &GeoUnit) -> Result<Vec<String>, GraphError> {
    let values = table
        .row_by_code(tract.code())
        .ok_or_else(|| GraphError::TractNotInTable(tract.code().into()))?
        .to_vec();
    let region = graph.ensure_tract(tract)?;
    attach_values(graph, table, &region, &values)
}

/// Population-level variant: city metrics valued at the column means.
pub fn attach_city_evidence(graph: &mut KnowledgeGraph, table: &FeatureTable, city: &str) -> Result<Vec<String>, GraphError> {
    let region = city_node_id(city);
    if graph.node(&region).is_none() {
        graph.add_typed_instance(&region, city, "GISO:City")?;
    }
    let means = if table.is_empty() { vec![] } else { table.column_means() };
    attach_values(graph, table, &region, &means)
}

/// Step four: `isPredictorOf` edges from each model feature to the outcome
/// metric with importance evidence, and `contributesTo` edges with SHAP
/// evidence when an explanation is given.
pub fn enrich_from_model(
    graph: &mut KnowledgeGraph,
    report: &ModelReport,
    expl: Option<&ShapExplanation>,
) -> Result<Vec<String>, GraphError> {
    let mut ids = Vec::new();
    if report.model.features.is_empty() {
        return Ok(ids);
    }
    let region = graph.region.clone().ok_or_else(|| GraphError::UnmappedFeature(report.model.target.clone()))?;
    let metric = |g: &KnowledgeGraph, column: &str| {
        let id = metric_node_id(&region, column);
        g.node(&id).map(|_| id).ok_or_else(|| GraphError::UnmappedFeature(column.into()))
    };
    let outcome = metric(graph, &report.model.target)?;
    for f in &report.model.features {
        let mid = metric(graph, f)?;
        if let Some(&score) = report.importance.get(f) {
            let ev = Evidence { kind: EvidenceKind::Importance, value: score };
            ids.push(graph.assert_fact(&mid, "isPredictorOf", &outcome, Origin::MlDerived, Some(ev))?);
        }
    }
    if let Some(e) = expl {
        for f in &report.model.features {
            let mid = metric(graph, f)?;
            if let Some(&phi) = e.phi.get(f) {
                let ev = Evidence { kind: EvidenceKind::Shap, value: phi };
                ids.push(graph.assert_fact(&mid, "contributesTo", &outcome, Origin::MlDerived, Some(ev))?);
            }
        }
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub new_facts: Vec<Edge>,
    pub iterations: usize,
}

type Binding = BTreeMap<String, usize>;

/// Read-only view used while matching a round.
struct Matcher<'a> {
    ont: &'a Ontology,
    nodes: &'a [Node],
    node_index: &'a HashMap<String, usize>,
    /// relation → (subject idx, object idx, edge id), in edge order.
    by_relation: HashMap<&'a str, Vec<(usize, usize, &'a str)>>,
    triples: BTreeSet<(usize, &'a str, usize)>,
    thresholds: &'a BTreeMap<String, f64>,
}

impl<'a> Matcher<'a> {
    fn new(g: &'a KnowledgeGraph, edges: &'a [Edge]) -> Self {
        let mut by_relation: HashMap<&str, Vec<_>> = HashMap::new();
        let mut triples = BTreeSet::new();
        for e in edges {
            let (s, o) = (g.node_index[&e.subject], g.node_index[&e.object]);
            by_relation.entry(&e.relation).or_default().push((s, o, e.id.as_str()));
            triples.insert((s, e.relation.as_str(), o));
        }
        Matcher {
            ont: &g.ontology,
            nodes: &g.nodes,
            node_index: &g.node_index,
            by_relation,
            triples,
            thresholds: &g.thresholds,
        }
    }

    fn fits(&self, arg: &Arg, node: usize, b: &Binding) -> bool {
        match arg {
            Arg::Var(v) => b.get(v).is_none_or(|&n| n == node),
            Arg::Const(t) => self.ont.is_subsumed(&self.nodes[node].term, t),
        }
    }

    fn bind(arg: &Arg, node: usize, b: &mut Binding) {
        if let Arg::Var(v) = arg {
            b.insert(v.clone(), node);
        }
    }

    /// All ways to satisfy `atom` extending `b`, with the cited edge if any.
    fn matches(&self, atom: &Atom, b: &Binding) -> Vec<(Binding, Option<&'a str>)> {
        let mut out = Vec::new();
        let Some(cands) = self.by_relation.get(atom.relation.as_str()) else {
            return out;
        };
        for &(s, o, id) in cands {
            if self.fits(&atom.subject, s, b) {
                let mut nb = b.clone();
                Self::bind(&atom.subject, s, &mut nb);
                if self.fits(&atom.object, o, &nb) {
                    Self::bind(&atom.object, o, &mut nb);
                    out.push((nb, Some(id)));
                }
            }
        }
        let mut inherited = BTreeSet::new();
        for &(c, o, _) in cands {
            if self.nodes[c].kind != NodeKind::Concept || self.nodes[o].kind != NodeKind::Concept {
                continue;
            }
            for (s, node) in self.nodes.iter().enumerate() {
                if node.kind != NodeKind::Concept
                    && self.ont.is_subsumed(&node.term, &self.nodes[c].term)
                    && !self.triples.contains(&(s, atom.relation.as_str(), o))
                {
                    inherited.insert((s, o));
                }
            }
        }
        for (s, o) in inherited {
            if self.fits(&atom.subject, s, b) {
                let mut nb = b.clone();
                Self::bind(&atom.subject, s, &mut nb);
                if self.fits(&atom.object, o, &nb) {
                    Self::bind(&atom.object, o, &mut nb);
                    out.push((nb, None));
                }
            }
        }
        out
    }

    fn guards_hold(&self, rule: &RuleAxiom, b: &Binding) -> bool {
        rule.guards.iter().all(|g| {
            let Some(lhs) = b.get(&g.var).and_then(|&n| self.nodes[n].value) else {
                return false;
            };
            let rhs = match &g.rhs {
                GuardRhs::Number(x) => Some(*x),
                GuardRhs::Threshold(v) => b.get(v).and_then(|&n| self.thresholds.get(&self.nodes[n].term.key()).copied()),
            };
            rhs.is_some_and(|r| g.op.holds(lhs, r))
        })
    }

    fn resolve_head(&self, arg: &Arg, b: &Binding) -> Option<usize> {
        match arg {
            Arg::Var(v) => b.get(v).copied(),
            Arg::Const(t) => self.node_index.get(&t.key()).copied(),
        }
    }

    /// Every (head triple, derivation) the rule yields on this snapshot.
    fn fire(&self, rule: &RuleAxiom) -> Vec<((usize, usize), Derivation)> {
        let mut partial: Vec<(Binding, Vec<&str>)> = vec![(Binding::new(), Vec::new())];
        for atom in &rule.body {
            let mut next = Vec::new();
            for (b, cited) in &partial {
                for (nb, id) in self.matches(atom, b) {
                    let mut c = cited.clone();
                    if let Some(id) = id {
                        if !c.contains(&id) {
                            c.push(id);
                        }
                    }
                    next.push((nb, c));
                }
            }
            partial = next;
        }
        let mut out = Vec::new();
        for (b, cited) in partial {
            if !self.guards_hold(rule, &b) {
                continue;
            }
            let (Some(s), Some(o)) = (self.resolve_head(&rule.head.subject, &b), self.resolve_head(&rule.head.object, &b))
            else {
                continue;
            };
            let d = Derivation { rule: rule.id.clone(), premises: cited.into_iter().map(String::from).collect() };
            if !out.contains(&((s, o), d.clone())) {
                out.push(((s, o), d));
            }
        }
        out
    }
}

/// Step three: naive forward chaining to fixpoint. Each round evaluates
/// every rule against the edges present at the start of the round.
pub fn infer(graph: &mut KnowledgeGraph) -> Result<InferenceResult, GraphError> {
    let ont = graph.ontology_arc();
    let n_rel = ont.relations().len().max(1) + 1;
    let cap = graph.nodes.len().pow(2) * n_rel;
    let start = graph.edges.len();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let snapshot = graph.edges.clone();
        let fired: Vec<(String, (usize, usize), Derivation)> = {
            let m = Matcher::new(graph, &snapshot);
            ont.rules().iter().flat_map(|r| m.fire(r).into_iter().map(|(t, d)| (r.head.relation.clone(), t, d))).collect()
        };
        let mut changed = false;
        for (rel, (s, o), d) in fired {
            let (sid, oid) = (graph.nodes[s].id.clone(), graph.nodes[o].id.clone());
            match graph.triple_index.get(&(sid.clone(), rel.clone(), oid.clone())).copied() {
                Some(i) => {
                    let e = &mut graph.edges[i];
                    if e.origin == Origin::Inferred && !e.derivations.contains(&d) {
                        e.derivations.push(d);
                        changed = true;
                    }
                }
                None => {
                    let id = format!("D{}", graph.next_derived);
                    graph.next_derived += 1;
                    let edge = Edge {
                        id,
                        subject: sid,
                        relation: rel,
                        object: oid,
                        origin: Origin::Inferred,
                        evidence: None,
                        derivations: vec![d],
                    };
                    graph.push_edge(edge);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        if iterations > cap {
            return Err(GraphError::InferenceOverflow { cap });
        }
    }
    graph.at_fixpoint = true;
    Ok(InferenceResult { new_facts: graph.edges[start..].to_vec(), iterations })
}

/// A rule application and the facts it used, recursively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceTree {
    pub fact: String,
    pub rule: Option<String>,
    pub children: Vec<ProvenanceTree>,
}

impl ProvenanceTree {
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ProvenanceTree::depth).max().unwrap_or(0)
    }

    /// Fact and rule ids in pre-order, without repeats.
    pub fn ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<String>) {
        for id in std::iter::once(&self.fact).chain(&self.rule) {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
        for c in &self.children {
            c.collect(out);
        }
    }
}

/// Provenance tree following each inferred edge's first derivation, whose
/// premises always predate the edge, so the tree is finite.
pub fn provenance_tree(graph: &KnowledgeGraph, fact_id: &str) -> Result<ProvenanceTree, GraphError> {
    let e = graph.edge(fact_id).ok_or_else(|| GraphError::UnknownFact(fact_id.into()))?;
    let Some(d) = e.derivations.first() else {
        return Ok(ProvenanceTree { fact: e.id.clone(), rule: None, children: vec![] });
    };
    let children = d.premises.iter().map(|p| provenance_tree(graph, p)).collect::<Result<_, _>>()?;
    Ok(ProvenanceTree { fact: e.id.clone(), rule: Some(d.rule.clone()), children })
}

/// Replays every derivation of an inferred edge as a single rule
/// instantiation restricted to its cited premises (plus the concept layer
/// for type inheritance) and checks it yields exactly that edge.
pub fn verify_derivation(graph: &KnowledgeGraph, fact_id: &str) -> Result<bool, GraphError> {
    let e = graph.edge(fact_id).ok_or_else(|| GraphError::UnknownFact(fact_id.into()))?;
    if e.origin != Origin::Inferred {
        return Ok(true);
    }
    if e.derivations.is_empty() {
        return Ok(false);
    }
    for d in &e.derivations {
        let Some(rule) = graph.ontology.rule(&d.rule) else {
            return Ok(false);
        };
        let is_concept = |id: &str| graph.node(id).is_some_and(|n| n.kind == NodeKind::Concept);
        let allowed: Vec<Edge> = graph
            .edges
            .iter()
            .filter(|x| d.premises.contains(&x.id) || (is_concept(&x.subject) && is_concept(&x.object)))
            .cloned()
            .collect();
        let m = Matcher::new(graph, &allowed);
        let (s, o) = (graph.node_index[&e.subject], graph.node_index[&e.object]);
        let ok = rule.head.relation == e.relation && m.fire(rule).iter().any(|((hs, ho), rd)| (*hs, *ho) == (s, o) && rd == d);
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDoc {
    pub kind: EvidenceKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub label: String,
    pub ns: String,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub units: Option<Units>,
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub id: String,
    pub src: String,
    pub rel: String,
    pub dst: String,
    pub origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence: Option<EvidenceDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<Vec<String>>,
}

/// The wire format consumed by the dashboard and the pathway explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

/// Exports the graph; nodes whose term is subsumed by a highlight term are
/// flagged.
pub fn export_graph(graph: &KnowledgeGraph, highlight: &BTreeSet<Term>) -> GraphDocument {
    let ont = graph.ontology();
    let nodes = graph
        .nodes
        .iter()
        .map(|n| NodeDoc {
            id: n.id.clone(),
            label: n.label.clone(),
            ns: n.term.namespace.clone(),
            kind: n.kind,
            value: n.value,
            units: n.units,
            highlighted: highlight.iter().any(|h| ont.is_subsumed(&n.term, h)),
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|e| EdgeDoc {
            id: e.id.clone(),
            src: e.subject.clone(),
            rel: e.relation.clone(),
            dst: e.object.clone(),
            origin: e.origin,
            evidence: e.evidence.map(|ev| EvidenceDoc { kind: ev.kind, value: ev.value }),
            provenance: (e.origin == Origin::Inferred).then(|| e.provenance()),
        })
        .collect();
    GraphDocument { nodes, edges }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ({})", self.subject, self.relation, self.object, self.id)
    }
}

/// Splits a facts line into words, keeping `"quoted strings"` whole.
fn words(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => s.push(ch),
                    None => return Err("unterminated string".into()),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

/// Loads a facts file into a graph over `ont`.
///
/// ```text
/// node patient instance ACESO:Patient "Patient"
/// node m1 metric HIO:PctUnderPovertyLine 60 percent "%UnderPovertyLine"
/// threshold COPE:Poverty 28.65
/// subject patient
/// fact F1: patient livesIn tract .
/// fact F6: m1 isPredictorOf m2 ml_derived importance 100 .
/// fact E1: m2 isHealthIndicatorFor DO:Obesity data_evidence .
/// ```
///
/// Concept nodes for ground-axiom terms are created automatically; a term
/// may also be used directly as a node id to name its concept node.
pub fn parse_facts(ont: Arc<Ontology>, text: &str) -> Result<KnowledgeGraph, GraphError> {
    let mut g = KnowledgeGraph::new(ont);
    g.add_axiom_concepts();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let err = |m: &str| GraphError::FactsSyntax { line, message: m.into() };
        let w = words(content).map_err(|m| err(&m))?;
        let term = |s: &str| Term::parse(s).ok_or_else(|| err(&format!("bad term {s:?}")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number {s:?}")));
        match w[0].as_str() {
            "node" => {
                if w.len() < 5 {
                    return Err(err("expected: node <id> <kind> <Term> [value units] \"label\""));
                }
                let t = term(&w[3])?;
                let node = match (w[2].as_str(), w.len()) {
                    ("instance", 5) => Node::instance(&w[1], &w[4], &t),
                    ("concept", 5) => Node { id: w[1].clone(), label: w[4].clone(), ..Node::concept(&t) },
                    ("metric" | "literal", 7) => {
                        let units = w[5].parse::<Units>().map_err(|m| err(&m))?;
                        let kind = if w[2] == "metric" { NodeKind::Metric } else { NodeKind::Literal };
                        Node { kind, ..Node::metric(&w[1], &w[6], &t, num(&w[4])?, units) }
                    }
                    _ => return Err(err("unknown node kind or wrong arity")),
                };
                g.add_node(node)?;
            }
            "threshold" => {
                if w.len() != 3 {
                    return Err(err("expected: threshold <Term> <value>"));
                }
                let t = term(&w[1])?;
                g.set_threshold(&t, num(&w[2])?);
            }
            "subject" => {
                if w.len() != 2 || g.node(&w[1]).is_none() {
                    return Err(err("expected: subject <existing node id>"));
                }
                g.subject = Some(w[1].clone());
            }
            "region" => {
                if w.len() != 2 || g.node(&w[1]).is_none() {
                    return Err(err("expected: region <existing node id>"));
                }
                g.region = Some(w[1].clone());
            }
            "fact" => {
                if w.last().map(String::as_str) != Some(".") || !matches!(w.len(), 6 | 7 | 9) {
                    return Err(err("expected: fact <ID>: <s> <rel> <o> [origin kind value] ."));
                }
                let id = w[1].strip_suffix(':').ok_or_else(|| err("fact id must end with ':'"))?;
                let origin = match w.len() {
                    6 => Origin::Asserted,
                    _ => w[5].parse::<Origin>().map_err(|m| err(&m))?,
                };
                let evidence = match w.len() {
                    9 => {
                        let kind = w[6].parse::<EvidenceKind>().map_err(|m| err(&m))?;
                        Some(Evidence { kind, value: num(&w[7])? })
                    }
                    _ => None,
                };
                if origin == Origin::Inferred {
                    return Err(err("facts cannot be asserted as inferred"));
                }
                for n in [&w[2], &w[4]] {
                    if g.node(n).is_none() {
                        if let Some(t) = Term::parse(n).filter(|t| g.ontology.has_concept(t)) {
                            g.ensure_concept(&t);
                        }
                    }
                }
                let got = g.assert_fact_with_id(id, &w[2], &w[3], &w[4], origin, evidence)?;
                if got != id {
                    return Err(GraphError::DuplicateFactId(format!("{id} repeats {got}")));
                }
            }
            other => return Err(err(&format!("unknown statement {other:?}"))),
        }
    }
    Ok(g)
}
