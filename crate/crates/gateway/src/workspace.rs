//! On-disk workspace: one directory per city.
//!
//! ```text
//! <root>/workspace.conf           city = ..., level = census_tract
//! <root>/ontology.onto            optional; the bundled ontology otherwise
//! <root>/tables/<name>.csv        ingested feature tables, joined by name order
//! <root>/tables/<name>.manifest.tsv
//! <root>/crosswalk.csv            optional zip,tract_fips crosswalk
//! <root>/reports/                 persisted analyses (see `store`)
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use upho_core::ontology::{self, Ontology};
use upho_core::tabledata::{
    link_tables, parse_feature_csv, parse_manifest, FeatureTable, GeoLevel, ZipTractCrosswalk,
};

use crate::error::{AtStage, ErrorKind, Stage, StageError};

const CONF: &str = "workspace.conf";

/// An immutable snapshot of a workspace; analyses never see later ingests.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    city: String,
    ontology: Arc<Ontology>,
    table: FeatureTable,
    crosswalk: Option<ZipTractCrosswalk>,
    fingerprint: String,
}

fn unavailable(message: String) -> StageError {
    StageError::new(Stage::Ingest, ErrorKind::Unavailable, message)
}

/// Writes through a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn read_conf(root: &Path) -> Result<(String, GeoLevel), StageError> {
    let path = root.join(CONF);
    let text = fs::read_to_string(&path)
        .map_err(|_| unavailable(format!("no workspace at {} (run `upho ingest` first)", root.display())))?;
    let mut city = None;
    let mut level = GeoLevel::CensusTract;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("city", v)) => city = Some(v.to_string()),
            Some(("level", v)) => level = v.parse().map_err(|e: String| StageError::invalid(Stage::Ingest, e))?,
            _ => return Err(StageError::invalid(Stage::Ingest, format!("{}: bad line {line:?}", path.display()))),
        }
    }
    let city = city.ok_or_else(|| StageError::invalid(Stage::Ingest, format!("{} lacks a city", path.display())))?;
    Ok((city, level))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn table_names(root: &Path) -> Result<Vec<String>, StageError> {
    let dir = root.join("tables");
    let mut names = Vec::new();
    if let Ok(entries) = fs::read_dir(&dir) {
        for e in entries {
            let e = e.at(Stage::Ingest)?;
            let file = e.file_name().to_string_lossy().into_owned();
            if let Some(n) = file.strip_suffix(".csv") {
                names.push(n.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn load_ontology(root: &Path) -> Result<(Ontology, String), StageError> {
    let path = root.join("ontology.onto");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(_) => ontology::BUNDLED_ONTOLOGY.to_string(),
    };
    let ont = ontology::parse_ontology(&text).map_err(|e| StageError::invalid(Stage::Ontology, e.to_string()))?;
    Ok((ont, text))
}

fn load_table(root: &Path, name: &str, level: GeoLevel) -> Result<(FeatureTable, Vec<u8>, String), StageError> {
    let dir = root.join("tables");
    let csv = fs::read(dir.join(format!("{name}.csv"))).at(Stage::Ingest)?;
    let manifest = fs::read_to_string(dir.join(format!("{name}.manifest.tsv"))).at(Stage::Ingest)?;
    let bindings = parse_manifest(&manifest).map_err(|e| StageError::invalid(Stage::Ingest, format!("{name}: {e}")))?;
    let table = parse_feature_csv(&csv, level, &bindings, name)
        .map_err(|e| StageError::invalid(Stage::Ingest, format!("{name}: {e}")))?;
    Ok((table, csv, manifest))
}

fn check_namespaces(ont: &Ontology, table: &FeatureTable) -> Result<(), StageError> {
    for b in table.bindings() {
        if !ont.declares_prefix(b.namespace()) {
            return Err(StageError::invalid(
                Stage::Ingest,
                format!("column {} binds {} whose namespace is not declared", b.column_name, b.term),
            ));
        }
    }
    Ok(())
}

impl Workspace {
    /// Creates the workspace directory, or updates its city.
    pub fn init(root: &Path, city: &str, level: GeoLevel) -> Result<(), StageError> {
        if city.trim().is_empty() || city.contains('\n') {
            return Err(StageError::invalid(Stage::Ingest, "city name must be a non-empty single line"));
        }
        if let Ok((_, existing)) = read_conf(root) {
            if existing != level {
                return Err(StageError::invalid(
                    Stage::Ingest,
                    format!("workspace holds {existing} data, cannot switch to {level}"),
                ));
            }
        }
        write_atomic(&root.join(CONF), format!("city = {}\nlevel = {level}\n", city.trim()).as_bytes()).at(Stage::Ingest)
    }

    /// Validates and stores a feature table under `name`, replacing any
    /// table of that name. The stored set must still join.
    pub fn ingest_table(root: &Path, name: &str, csv: &[u8], manifest: &str) -> Result<FeatureTable, StageError> {
        if !valid_name(name) {
            return Err(StageError::invalid(Stage::Ingest, format!("bad table name {name:?}")));
        }
        let (_, level) = read_conf(root)?;
        let bindings = parse_manifest(manifest).map_err(|e| StageError::invalid(Stage::Ingest, e.to_string()))?;
        let table =
            parse_feature_csv(csv, level, &bindings, name).map_err(|e| StageError::invalid(Stage::Ingest, e.to_string()))?;
        let (ont, _) = load_ontology(root)?;
        check_namespaces(&ont, &table)?;
        let mut tables = vec![];
        for other in table_names(root)?.into_iter().filter(|n| n != name) {
            tables.push(load_table(root, &other, level)?.0);
        }
        tables.push(table.clone());
        link_tables(&tables).map_err(|e| StageError::invalid(Stage::Ingest, e.to_string()))?;
        let dir = root.join("tables");
        write_atomic(&dir.join(format!("{name}.manifest.tsv")), manifest.as_bytes()).at(Stage::Ingest)?;
        write_atomic(&dir.join(format!("{name}.csv")), csv).at(Stage::Ingest)?;
        Ok(table)
    }

    /// Replaces the workspace ontology after validating it and checking
    /// that every ingested column still binds a declared namespace.
    pub fn install_ontology(root: &Path, text: &str) -> Result<Ontology, StageError> {
        let (_, level) = read_conf(root)?;
        let ont = ontology::parse_ontology(text).map_err(|e| StageError::invalid(Stage::Ontology, e.to_string()))?;
        if let Some(d) = ontology::validate(&ont).first() {
            return Err(StageError::invalid(Stage::Ontology, format!("rule {}: {}", d.rule, d.message)));
        }
        for name in table_names(root)? {
            check_namespaces(&ont, &load_table(root, &name, level)?.0)?;
        }
        write_atomic(&root.join("ontology.onto"), text.as_bytes()).at(Stage::Ontology)?;
        Ok(ont)
    }

    pub fn ingest_crosswalk(root: &Path, csv: &[u8]) -> Result<ZipTractCrosswalk, StageError> {
        read_conf(root)?;
        let cw = ZipTractCrosswalk::parse_csv(csv).map_err(|e| StageError::invalid(Stage::Ingest, e.to_string()))?;
        write_atomic(&root.join("crosswalk.csv"), csv).at(Stage::Ingest)?;
        Ok(cw)
    }

    pub fn open(root: &Path) -> Result<Workspace, StageError> {
        let (city, level) = read_conf(root)?;
        let names = table_names(root)?;
        if names.is_empty() {
            return Err(unavailable(format!("workspace {} has no ingested tables", root.display())));
        }
        let (ont, ont_text) = load_ontology(root)?;
        let mut hasher = Sha256::new();
        hasher.update(ont_text.as_bytes());
        let mut tables = Vec::new();
        for n in &names {
            let (t, csv, manifest) = load_table(root, n, level)?;
            check_namespaces(&ont, &t)?;
            for part in [n.as_bytes(), &csv, manifest.as_bytes()] {
                hasher.update((part.len() as u64).to_le_bytes());
                hasher.update(part);
            }
            tables.push(t);
        }
        let table = link_tables(&tables).map_err(|e| StageError::invalid(Stage::Ingest, e.to_string()))?;
        let crosswalk = match fs::read(root.join("crosswalk.csv")) {
            Ok(bytes) => {
                hasher.update(&bytes);
                Some(ZipTractCrosswalk::parse_csv(&bytes).map_err(|e| StageError::invalid(Stage::Ingest, e.to_string()))?)
            }
            Err(_) => None,
        };
        hasher.update(city.as_bytes());
        Ok(Workspace {
            root: root.to_path_buf(),
            city,
            ontology: Arc::new(ont),
            table,
            crosswalk,
            fingerprint: hex::encode(hasher.finalize()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn city(&self) -> &str {
        &self.city
    }

    pub fn ontology(&self) -> &Arc<Ontology> {
        &self.ontology
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    pub fn crosswalk(&self) -> Option<&ZipTractCrosswalk> {
        self.crosswalk.as_ref()
    }

    /// Content hash of everything an analysis reads from the workspace.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}
