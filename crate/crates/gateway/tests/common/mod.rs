#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;
use upho_gateway::config::Settings;
use upho_gateway::demo::{init_workspace, synthetic_city, DemoCity, DEMO_SEED};
use upho_gateway::request::AnalysisRequest;
use upho_gateway::workspace::Workspace;

/// A small grid keeps each analysis around a second.
pub const FAST_CONFIG: &str = "c_grid = 0.5, 1\nepsilon_grid = 0.05, 0.1\nfolds = 3\n";

pub fn fast_settings() -> Settings {
    Settings::parse(FAST_CONFIG, Path::new(".")).unwrap()
}

pub fn city() -> DemoCity {
    synthetic_city(DEMO_SEED)
}

pub fn workspace() -> (TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = init_workspace(dir.path(), &city()).unwrap();
    (dir, ws)
}

pub fn request(name: &str) -> AnalysisRequest {
    city().requests.into_iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("no request {name}")).1
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic_city")
}
