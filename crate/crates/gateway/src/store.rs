//! Content-addressed report persistence.
//!
//! `reports/<id>.json` holds the canonical document, `reports/<id>.timings.json`
//! the stage timings, and `reports/index.json` lists stored analyses in
//! the order they were first saved. Every file is replaced by rename, so a
//! crash leaves either the old or the new version.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{AtStage, ErrorKind, Stage, StageError};
use crate::report::AnalysisReport;
use crate::request::{Level, Role};
use crate::workspace::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub outcome: String,
    pub level: Level,
    pub location: String,
    pub seed: u64,
    pub role: Role,
}

impl IndexEntry {
    fn of(r: &AnalysisReport) -> Self {
        IndexEntry {
            id: r.id.clone(),
            outcome: r.request.outcome.clone(),
            level: r.request.level,
            location: r.request.location.clone(),
            seed: r.request.seed,
            role: r.request.role,
        }
    }
}

#[derive(Debug)]
pub struct ReportStore {
    dir: PathBuf,
    writer: Mutex<()>,
    cache: RwLock<HashMap<String, Arc<AnalysisReport>>>,
}

fn is_report_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn not_found(id: &str) -> StageError {
    StageError::new(Stage::Persist, ErrorKind::NotFound, format!("no analysis {id}"))
}

impl ReportStore {
    pub fn open(dir: &Path) -> Self {
        ReportStore { dir: dir.to_path_buf(), writer: Mutex::new(()), cache: RwLock::new(HashMap::new()) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn index_path(&self) -> PathBuf {
        self.dir.join("index.json")
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>, StageError> {
        match fs::read(self.index_path()) {
            Ok(bytes) => serde_json::from_slice(&bytes).at(Stage::Persist),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(StageError::failed(Stage::Persist, e.to_string())),
        }
    }

    /// Stores a report under its content id. Saving the same content twice
    /// rewrites identical bytes and leaves the index order alone.
    pub fn save(&self, report: &AnalysisReport) -> Result<(), StageError> {
        if report.id != report.content_id() {
            return Err(StageError::failed(Stage::Persist, "report id does not match its content"));
        }
        let bytes = report.canonical_document();
        let mut reloaded: AnalysisReport = serde_json::from_slice(&bytes).at(Stage::Persist)?;
        reloaded.timings = report.timings.clone();
        if &reloaded != report {
            return Err(StageError::failed(Stage::Persist, "report does not survive a serialization round trip"));
        }
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&self.dir.join(format!("{}.json", report.id)), &bytes).at(Stage::Persist)?;
        if let Some(t) = &report.timings {
            let tb = serde_json::to_vec_pretty(t).at(Stage::Persist)?;
            write_atomic(&self.dir.join(format!("{}.timings.json", report.id)), &tb).at(Stage::Persist)?;
        }
        let mut index = self.index()?;
        if !index.iter().any(|e| e.id == report.id) {
            index.push(IndexEntry::of(report));
            let ib = serde_json::to_vec_pretty(&index).at(Stage::Persist)?;
            write_atomic(&self.index_path(), &ib).at(Stage::Persist)?;
        }
        self.cache.write().unwrap_or_else(|p| p.into_inner()).insert(report.id.clone(), Arc::new(report.clone()));
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Arc<AnalysisReport>, StageError> {
        if !is_report_id(id) {
            return Err(not_found(id));
        }
        if let Some(r) = self.cache.read().unwrap_or_else(|p| p.into_inner()).get(id) {
            return Ok(r.clone());
        }
        let bytes = fs::read(self.dir.join(format!("{id}.json"))).map_err(|_| not_found(id))?;
        let mut report: AnalysisReport = serde_json::from_slice(&bytes).at(Stage::Persist)?;
        if let Ok(tb) = fs::read(self.dir.join(format!("{id}.timings.json"))) {
            report.timings = serde_json::from_slice(&tb).ok();
        }
        let report = Arc::new(report);
        self.cache.write().unwrap_or_else(|p| p.into_inner()).insert(id.to_string(), report.clone());
        Ok(report)
    }

    /// Raw persisted bytes of a report.
    pub fn document(&self, id: &str) -> Result<Vec<u8>, StageError> {
        if !is_report_id(id) {
            return Err(not_found(id));
        }
        fs::read(self.dir.join(format!("{id}.json"))).map_err(|_| not_found(id))
    }
}
