//! The `upho` command line.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use upho_core::explain::{default_whitelist, trace_pathways, DEFAULT_MAX_LEN};
use upho_core::graphstore::{export_graph, infer, parse_facts, provenance_tree, KnowledgeGraph, Origin, ProvenanceTree};
use upho_core::ontology::{self, Ontology};
use upho_core::tabledata::GeoLevel;

use crate::config::Settings;
use crate::demo::{self, DEMO_SEED};
use crate::error::{AtStage, Stage, StageError};
use crate::pipeline::run_analysis;
use crate::request::AnalysisRequest;
use crate::server::{serve, AppState};
use crate::store::ReportStore;
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "upho", version, about = "Explainable population-health observatory")]
pub struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, env = "UPHO_WORKSPACE", default_value = "upho-workspace")]
    pub workspace: PathBuf,
    /// Overrides the request seed (or the demo generator seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` settings file.
    #[arg(long, global = true, env = "UPHO_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add a feature table, crosswalk or ontology to the workspace.
    Ingest(IngestArgs),
    /// Ontology utilities.
    Ontology {
        #[command(subcommand)]
        action: OntologyCommand,
    },
    /// Run an analysis request and persist its report.
    Analyze {
        /// Request JSON file.
        #[arg(long)]
        request: PathBuf,
        /// Also write the report document here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the reasoner over a facts file and print derived facts.
    Reason {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Print the full derivation tree of each derived fact.
        #[arg(long)]
        tree: bool,
        /// Print the graph document instead.
        #[arg(long)]
        json: bool,
    },
    /// Trace pathways between two nodes of a facts file after inference.
    Trace {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Serve the HTTP API over the workspace.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write the synthetic demo city.
    DemoData {
        #[arg(long)]
        out: PathBuf,
        /// Also initialise the workspace with it.
        #[arg(long)]
        ingest: bool,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Table name; needs --csv and --manifest.
    #[arg(long, requires_all = ["csv", "manifest"])]
    pub name: Option<String>,
    #[arg(long, requires = "name")]
    pub csv: Option<PathBuf>,
    #[arg(long, requires = "name")]
    pub manifest: Option<PathBuf>,
    /// Initialise (or rename) the workspace city.
    #[arg(long)]
    pub city: Option<String>,
    #[arg(long, default_value = "census_tract")]
    pub level: String,
    /// Zip-to-tract crosswalk CSV.
    #[arg(long)]
    pub crosswalk: Option<PathBuf>,
    /// Replacement ontology file.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum OntologyCommand {
    /// Parse and validate an ontology (the bundled one by default).
    Check {
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
}

fn read_text(path: &Path, stage: Stage) -> Result<String, StageError> {
    fs::read_to_string(path).map_err(|e| StageError::invalid(stage, format!("{}: {e}", path.display())))
}

fn load_ontology(path: Option<&Path>) -> Result<Ontology, StageError> {
    match path {
        Some(p) => ontology::parse_ontology(&read_text(p, Stage::Ontology)?).map_err(|e| StageError::invalid(Stage::Ontology, e.to_string())),
        None => Ok(ontology::bundled()),
    }
}

fn load_facts(facts: &Path, ont: Option<&Path>) -> Result<KnowledgeGraph, StageError> {
    let ont = Arc::new(load_ontology(ont)?);
    parse_facts(ont, &read_text(facts, Stage::Graph)?).map_err(|e| StageError::invalid(Stage::Graph, e.to_string()))
}

fn load_settings(cli: &Cli) -> Result<Settings, StageError> {
    match &cli.config {
        Some(p) => Settings::load(p),
        None => Ok(Settings::default()),
    }
}

fn write_tree(out: &mut dyn Write, t: &ProvenanceTree, depth: usize) -> std::io::Result<()> {
    let rule = t.rule.as_deref().map(|r| format!(" by {r}")).unwrap_or_default();
    writeln!(out, "{}{}{rule}", "  ".repeat(depth), t.fact)?;
    for c in &t.children {
        write_tree(out, c, depth + 1)?;
    }
    Ok(())
}

fn ingest(cli: &Cli, a: &IngestArgs, out: &mut dyn Write) -> Result<(), StageError> {
    let root = &cli.workspace;
    if let Some(city) = &a.city {
        let level: GeoLevel = a.level.parse().map_err(|e: String| StageError::invalid(Stage::Ingest, e))?;
        Workspace::init(root, city, level)?;
        writeln!(out, "workspace {} for {city}", root.display()).at(Stage::Ingest)?;
    }
    if let Some(p) = &a.ontology {
        let ont = Workspace::install_ontology(root, &read_text(p, Stage::Ontology)?)?;
        writeln!(out, "ontology: {} concepts, {} rules", ont.concepts().len(), ont.rules().len()).at(Stage::Ingest)?;
    }
    if let (Some(name), Some(csv), Some(manifest)) = (&a.name, &a.csv, &a.manifest) {
        let bytes = fs::read(csv).map_err(|e| StageError::invalid(Stage::Ingest, format!("{}: {e}", csv.display())))?;
        let t = Workspace::ingest_table(root, name, &bytes, &read_text(manifest, Stage::Ingest)?)?;
        writeln!(out, "table {name}: {} rows, {} columns", t.n_rows(), t.n_cols()).at(Stage::Ingest)?;
    }
    if let Some(p) = &a.crosswalk {
        let bytes = fs::read(p).map_err(|e| StageError::invalid(Stage::Ingest, format!("{}: {e}", p.display())))?;
        let cw = Workspace::ingest_crosswalk(root, &bytes)?;
        writeln!(out, "crosswalk: {} tracts", cw.entries().len()).at(Stage::Ingest)?;
    }
    Ok(())
}

/// Runs one command, writing human output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), StageError> {
    let io = |r: std::io::Result<()>| r.at(Stage::Persist);
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a, out),
        Command::Ontology { action: OntologyCommand::Check { ontology } } => {
            let ont = load_ontology(ontology.as_deref())?;
            let diags = ontology::validate(&ont);
            for d in &diags {
                io(writeln!(out, "{} {:?}: {}", d.rule, d.kind, d.message))?;
            }
            if !diags.is_empty() {
                return Err(StageError::invalid(Stage::Ontology, format!("{} diagnostics", diags.len())));
            }
            io(writeln!(
                out,
                "ok: {} concepts, {} relations, {} rules",
                ont.concepts().len(),
                ont.relations().len(),
                ont.rules().len()
            ))
        }
        Command::Analyze { request, out: doc_out } => {
            let ws = Workspace::open(&cli.workspace)?;
            let mut req = AnalysisRequest::from_json(&read_text(request, Stage::Request)?)
                .map_err(|m| StageError::invalid(Stage::Request, m))?;
            if let Some(s) = cli.seed {
                req.seed = s;
            }
            let settings = load_settings(cli)?;
            let store = ReportStore::open(&ws.reports_dir());
            let r = run_analysis(&ws, &store, &req, &settings)?;
            if let Some(p) = doc_out {
                fs::write(p, r.canonical_document()).at(Stage::Persist)?;
            }
            io(writeln!(out, "{}", r.id))?;
            let m = &r.model;
            io(writeln!(
                out,
                "model: C={} epsilon={} train r2={:.3} test r2={:.3}",
                m.model.hyper.c, m.model.hyper.epsilon, m.train.r2, m.test.r2
            ))?;
            if let Some(p) = r.pathways.first() {
                io(writeln!(out, "pathways: {} (top {:.3}: {})", r.pathways.len(), p.score, p.nodes.join(" -> ")))?;
            }
            for rec in &r.recommendations {
                io(writeln!(out, "recommendation: {}", rec.explanation.text))?;
            }
            Ok(())
        }
        Command::Reason { facts, ontology, tree, json } => {
            let mut g = load_facts(facts, ontology.as_deref())?;
            let res = infer(&mut g).at(Stage::Infer)?;
            if *json {
                let doc = export_graph(&g, &Default::default());
                return io(writeln!(out, "{}", serde_json::to_string_pretty(&doc).at(Stage::Persist)?));
            }
            for e in g.edges().iter().filter(|e| e.origin == Origin::Inferred) {
                io(writeln!(out, "{}: {} {} {} [using {}]", e.id, e.subject, e.relation, e.object, e.provenance().join(", ")))?;
                if *tree {
                    let t = provenance_tree(&g, &e.id).at(Stage::Infer)?;
                    io(write_tree(out, &t, 1))?;
                }
            }
            io(writeln!(out, "{} derived facts in {} rounds", res.new_facts.len(), res.iterations))
        }
        Command::Trace { facts, source, target, max_len, ontology } => {
            let mut g = load_facts(facts, ontology.as_deref())?;
            infer(&mut g).at(Stage::Infer)?;
            let paths = trace_pathways(&g, source, target, &default_whitelist(), *max_len).at(Stage::Pathways)?;
            for p in &paths {
                let mut line = p.nodes[0].clone();
                for (e, n) in p.edges.iter().zip(&p.nodes[1..]) {
                    let rel = g.edge(e).map_or("?", |e| e.relation.as_str());
                    line.push_str(&format!(" -{rel}-> {n}"));
                }
                io(writeln!(out, "{:.4}  {line}", p.score))?;
            }
            if paths.is_empty() {
                io(writeln!(out, "no pathway from {source} to {target}"))?;
            }
            Ok(())
        }
        Command::Serve { bind } => {
            let settings = load_settings(cli)?;
            let ws = Workspace::open(&cli.workspace)?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().at(Stage::Config)?;
            rt.block_on(serve(AppState::new(ws, settings), *bind))
        }
        Command::DemoData { out: dir, ingest } => {
            let city = demo::synthetic_city(cli.seed.unwrap_or(DEMO_SEED));
            demo::write_city(dir, &city)?;
            io(writeln!(out, "wrote synthetic city to {}", dir.display()))?;
            if *ingest {
                let ws = demo::init_workspace(&cli.workspace, &city)?;
                io(writeln!(out, "workspace {} ready ({} tracts)", cli.workspace.display(), ws.table().n_rows()))?;
            }
            Ok(())
        }
    }
}
