//! `run_analysis`: screening, model, attribution, graph, inference and
//! explanation stages assembled into one report.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use upho_core::attribution::{rank_contributions, shap_explain_row};
use upho_core::explain::{
    explain_edge, explain_node, recommendations, risk_levels, trace_pathways, CityStats, ExplainError,
};
use upho_core::graphstore::{
    attach_city_evidence, attach_evidence, enrich_from_model, export_graph, infer, metric_node_id, seed_graph,
    KnowledgeGraph, Subject,
};
use upho_core::ontology::{Arg, Ontology, Term};
use upho_core::regression::{
    evaluate, grid_search, importance, make_grid, train_svr, LinearSvrModel, ModelReport, SolverOptions, TargetScale,
};
use upho_core::stats::{correlation_report, fit_standardization, mean_sd, split_indices, vif, SplitSpec};
use upho_core::tabledata::{FeatureTable, GeoLevel, GeoUnit};

use crate::config::Settings;
use crate::error::{AtStage, ErrorKind, Stage, StageError};
use crate::report::{
    AnalysisReport, ColumnSummary, ExplanationSet, InferenceSummary, MeanSd, OutcomeInfo,
};
use crate::request::{Aim, AnalysisRequest, Granularity, Level, Role};
use crate::store::ReportStore;
use crate::workspace::Workspace;

struct Clock {
    last: Instant,
    spent: BTreeMap<String, f64>,
}

impl Clock {
    fn new() -> Self {
        Clock { last: Instant::now(), spent: BTreeMap::new() }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        *self.spent.entry(stage.to_string()).or_default() += (now - self.last).as_secs_f64() * 1000.0;
        self.last = now;
    }
}

/// The validated request, resolved against a workspace.
struct Resolved {
    outcome: usize,
    subject: Subject,
    tract: Option<GeoUnit>,
    highlight: BTreeSet<Term>,
}

fn resolve(ws: &Workspace, req: &AnalysisRequest) -> Result<Resolved, StageError> {
    let bad = |m: String| StageError::invalid(Stage::Request, m);
    let table = ws.table();
    let outcome = table
        .resolve_column(&req.outcome)
        .ok_or_else(|| bad(format!("outcome {:?} is not a column of the workspace table", req.outcome)))?;
    let (subject, tract) = match req.level {
        Level::Patient => {
            if req.role == Role::Public {
                return Err(StageError::new(Stage::Request, ErrorKind::Forbidden, "patient-level analyses are not available to the public role"));
            }
            let tract = GeoUnit::new(&req.location, GeoLevel::CensusTract)
                .ok_or_else(|| bad(format!("patient level needs an 11-digit tract code, got {:?}", req.location)))?;
            if table.row_by_code(tract.code()).is_none() {
                return Err(StageError::new(Stage::Request, ErrorKind::NotFound, format!("UnknownTract: {}", tract.code())));
            }
            if req.granularity == Granularity::Zip && ws.crosswalk().and_then(|c| c.zip_of(&tract)).is_none() {
                return Err(bad(format!("zip granularity needs a crosswalk entry for tract {}", tract.code())));
            }
            (Subject::Patient { tract: tract.clone() }, Some(tract))
        }
        Level::Population => {
            if !req.location.trim().eq_ignore_ascii_case(ws.city()) {
                return Err(StageError::new(
                    Stage::Request,
                    ErrorKind::NotFound,
                    format!("UnknownCity: {:?} (this workspace covers {})", req.location, ws.city()),
                ));
            }
            (Subject::Population { city: ws.city().to_string() }, None)
        }
    };
    let ont = ws.ontology();
    let mut highlight = BTreeSet::new();
    for f in &req.sdoh_filters {
        let t = Term::parse(f).filter(|t| ont.has_concept(t)).ok_or_else(|| bad(format!("unknown SDoH term {f:?}")))?;
        // A risk concept also lights up the metrics that indicate it.
        for r in ont.rules().iter().filter(|r| r.is_ground_axiom() && r.head.relation == "indicatorOfRisk") {
            if let (Arg::Const(m), Arg::Const(risk)) = (&r.head.subject, &r.head.object) {
                if ont.is_subsumed(risk, &t) {
                    highlight.insert(m.clone());
                }
            }
        }
        highlight.insert(t);
    }
    Ok(Resolved { outcome, subject, tract, highlight })
}

/// Disease the outcome metric indicates, when a ground axiom says so.
fn outcome_concept(ont: &Ontology, term: &Term) -> Option<Term> {
    ont.rules().iter().filter(|r| r.is_ground_axiom() && r.head.relation == "isHealthIndicatorFor").find_map(|r| {
        match (&r.head.subject, &r.head.object) {
            (Arg::Const(m), Arg::Const(d)) if ont.is_subsumed(term, m) => Some(d.clone()),
            _ => None,
        }
    })
}

fn summarize(table: &FeatureTable, train: &[usize], test: &[usize]) -> Vec<ColumnSummary> {
    let ms = |v: &[f64]| {
        let (mean, sd) = mean_sd(v);
        MeanSd { mean, sd }
    };
    table
        .bindings()
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let col = table.column_at(j);
            let pick = |idx: &[usize]| idx.iter().map(|&i| col[i]).collect::<Vec<_>>();
            ColumnSummary {
                column: b.column_name.clone(),
                term: b.term.clone(),
                units: b.units,
                all: ms(&col),
                train: ms(&pick(train)),
                test: ms(&pick(test)),
            }
        })
        .collect()
}

fn explanations(graph: &KnowledgeGraph, city: &CityStats, settings: &Settings) -> Result<BTreeMap<Role, ExplanationSet>, ExplainError> {
    let mut out = BTreeMap::new();
    for role in [Role::Physician, Role::Researcher] {
        let templates = settings.templates(role);
        let mut set = ExplanationSet::default();
        for n in graph.nodes() {
            set.nodes.insert(n.id.clone(), explain_node(graph, &n.id, city, templates)?);
        }
        for e in graph.edges() {
            set.edges.insert(e.id.clone(), explain_edge(graph, &e.id, city, templates)?);
        }
        out.insert(role, set);
    }
    Ok(out)
}

/// Runs every stage and returns the report without persisting it.
pub fn compute_report(ws: &Workspace, req: &AnalysisRequest, settings: &Settings) -> Result<AnalysisReport, StageError> {
    let cfg = &settings.analysis;
    let mut clock = Clock::new();
    let resolved = resolve(ws, req)?;
    let table = ws.table();
    let outcome = table.bindings()[resolved.outcome].clone();
    let importance_mode = req.importance_mode.unwrap_or(cfg.importance_mode);
    let r2_mode = req.r2_mode.unwrap_or(cfg.r2_mode);
    clock.lap(Stage::Request);

    let candidates: Vec<&str> = table.column_names().into_iter().filter(|c| *c != outcome.column_name).collect();
    if candidates.is_empty() {
        return Err(StageError::invalid(Stage::Screen, "the workspace table has no candidate features"));
    }
    let correlation = correlation_report(table, &outcome.column_name, &candidates).at(Stage::Screen)?;
    let screened: Vec<&str> =
        candidates.iter().copied().filter(|c| correlation.rho.get(*c).is_some_and(|r| r.abs() >= cfg.min_abs_rho)).collect();
    if screened.is_empty() {
        return Err(StageError::failed(Stage::Screen, format!("no feature reaches |rho| >= {}", cfg.min_abs_rho)));
    }
    clock.lap(Stage::Screen);

    let vif_report = vif(table, &screened, cfg.vif_threshold).at(Stage::Vif)?;
    let features: Vec<String> = vif_report.kept.clone();
    clock.lap(Stage::Vif);

    let feature_refs: Vec<&str> = features.iter().map(String::as_str).collect();
    let raw = table.select(&feature_refs).at(Stage::Standardize)?;
    let params = fit_standardization(&raw).at(Stage::Standardize)?;
    let x: Vec<Vec<f64>> = raw.rows().iter().map(|(_, r)| params.transform(r)).collect();
    let y_raw = table.column_at(resolved.outcome);
    let (y_mean, y_sd) = mean_sd(&y_raw);
    if !(y_sd > 0.0) {
        return Err(StageError::failed(Stage::Standardize, format!("outcome {} is constant", outcome.column_name)));
    }
    let y: Vec<f64> = y_raw.iter().map(|v| (v - y_mean) / y_sd).collect();
    clock.lap(Stage::Standardize);

    let spec = SplitSpec { train_fraction: cfg.train_fraction, k: cfg.folds, seed: req.seed };
    let (train, test) = split_indices(y.len(), &spec).at(Stage::Split)?;
    let rows = |idx: &[usize]| (idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>(), idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let (x_train, y_train) = rows(&train);
    let (x_test, y_test) = rows(&test);
    clock.lap(Stage::Split);

    let opts = SolverOptions::default();
    let grid = make_grid(&cfg.c_grid, &cfg.epsilon_grid);
    let (best, cv_table) = grid_search(&x_train, &y_train, &grid, cfg.folds, req.seed, &opts).at(Stage::GridSearch)?;
    clock.lap(Stage::GridSearch);

    let solution = train_svr(&x_train, &y_train, best, &opts).at(Stage::Fit)?;
    clock.lap(Stage::Fit);

    let train_fit = evaluate(&solution, &x_train, &y_train, r2_mode).at(Stage::Evaluate)?;
    let test_fit = evaluate(&solution, &x_test, &y_test, r2_mode).at(Stage::Evaluate)?;
    clock.lap(Stage::Evaluate);

    let imp = importance(&features, &solution, &x_train, &y_train, importance_mode).at(Stage::Importance)?;
    let model = LinearSvrModel::from_solution(
        &solution,
        features.clone(),
        outcome.column_name.clone(),
        params,
        TargetScale { mean: y_mean, sd: y_sd },
    )
    .at(Stage::Importance)?;
    let model_report = ModelReport {
        model,
        train: train_fit,
        test: test_fit,
        cv_table,
        importance: imp,
        importance_mode,
        r2_mode,
    };
    clock.lap(Stage::Importance);

    let shap = match &resolved.tract {
        Some(t) => Some(shap_explain_row(&model_report.model, &raw, t.code(), &raw).at(Stage::Shap)?),
        None => None,
    };
    let contributions = shap.as_ref().map(rank_contributions).unwrap_or_default();
    clock.lap(Stage::Shap);

    let ont = ws.ontology().clone();
    let mut graph = seed_graph(ont.clone(), &resolved.subject, Some(table), ws.crosswalk()).at(Stage::Graph)?;
    match &resolved.tract {
        Some(t) => attach_evidence(&mut graph, table, t).at(Stage::Graph)?,
        None => attach_city_evidence(&mut graph, table, ws.city()).at(Stage::Graph)?,
    };
    for (term, value) in &cfg.thresholds {
        let t = Term::parse(term).ok_or_else(|| StageError::invalid(Stage::Graph, format!("bad threshold term {term:?}")))?;
        graph.set_threshold(&t, *value);
    }
    enrich_from_model(&mut graph, &model_report, shap.as_ref()).at(Stage::Graph)?;
    clock.lap(Stage::Graph);

    let inferred = infer(&mut graph).at(Stage::Infer)?;
    let inference = InferenceSummary {
        iterations: inferred.iterations,
        derived: inferred.new_facts.iter().map(|e| e.id.clone()).collect(),
    };
    clock.lap(Stage::Infer);

    let subject = graph.subject().unwrap_or_default().to_string();
    let outcome_term = Term::parse(&outcome.term)
        .ok_or_else(|| StageError::invalid(Stage::Pathways, format!("bad outcome term {:?}", outcome.term)))?;
    let target_node = outcome_concept(&ont, &outcome_term)
        .map(|t| t.key())
        .filter(|id| graph.node(id).is_some())
        .unwrap_or_else(|| metric_node_id(graph.region().unwrap_or_default(), &outcome.column_name));
    let whitelist: BTreeSet<String> = cfg.whitelist.iter().cloned().collect();
    let pathways = match req.aim {
        Aim::CausalPathway => {
            let mut p = trace_pathways(&graph, &subject, &target_node, &whitelist, cfg.max_pathway_len).at(Stage::Pathways)?;
            p.truncate(cfg.max_pathways);
            p
        }
        Aim::Descriptive => Vec::new(),
    };
    clock.lap(Stage::Pathways);

    let risk = risk_levels(table, &model_report.model).at(Stage::Risk)?;
    clock.lap(Stage::Risk);

    let city_stats = CityStats::from_table(table);
    let recs = recommendations(&graph, &subject, &whitelist, &city_stats, settings.templates(req.role));
    clock.lap(Stage::Recommendations);

    let explained = explanations(&graph, &city_stats, settings).at(Stage::Explain)?;
    let document = export_graph(&graph, &resolved.highlight);
    clock.lap(Stage::Explain);

    let mut report = AnalysisReport {
        id: String::new(),
        request: req.clone(),
        settings: cfg.clone(),
        workspace: ws.fingerprint().to_string(),
        city: ws.city().to_string(),
        outcome: OutcomeInfo { column: outcome.column_name.clone(), term: outcome.term.clone(), target_node },
        descriptive: summarize(table, &train, &test),
        correlation,
        vif: vif_report,
        model: model_report,
        shap,
        contributions,
        graph: document,
        inference,
        pathways,
        risk_levels: risk,
        recommendations: recs,
        explanations: explained,
        timings: None,
    };
    report.id = report.content_id();
    report.timings = Some(clock.spent);
    Ok(report)
}

/// Runs the analysis and persists the report. Nothing is written when any
/// stage fails.
pub fn run_analysis(
    ws: &Workspace,
    store: &ReportStore,
    req: &AnalysisRequest,
    settings: &Settings,
) -> Result<AnalysisReport, StageError> {
    let report = compute_report(ws, req, settings)?;
    store.save(&report)?;
    Ok(report)
}
