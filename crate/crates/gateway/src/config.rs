//! `key = value` configuration overriding analysis defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use upho_core::explain::{default_whitelist, TemplateSet, DEFAULT_MAX_LEN};
use upho_core::ontology::Term;
use upho_core::regression::{ImportanceMode, R2Mode, DEFAULT_C_GRID, DEFAULT_EPSILON_GRID};

use crate::error::{Stage, StageError};
use crate::request::Role;

/// Every knob that changes report content. Serialized into each report so
/// the report id covers it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub c_grid: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub vif_threshold: f64,
    pub min_abs_rho: f64,
    pub train_fraction: f64,
    pub folds: usize,
    pub max_pathway_len: usize,
    pub max_pathways: usize,
    pub whitelist: Vec<String>,
    pub importance_mode: ImportanceMode,
    pub r2_mode: R2Mode,
    /// Guard thresholds replacing the city means, by term.
    pub thresholds: BTreeMap<String, f64>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            c_grid: DEFAULT_C_GRID.to_vec(),
            epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
            vif_threshold: 10.0,
            min_abs_rho: 0.0,
            train_fraction: 0.85,
            folds: 5,
            max_pathway_len: DEFAULT_MAX_LEN,
            max_pathways: 25,
            whitelist: default_whitelist().into_iter().collect(),
            importance_mode: ImportanceMode::default(),
            r2_mode: R2Mode::default(),
            thresholds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub analysis: AnalysisSettings,
    pub physician: TemplateSet,
    pub researcher: TemplateSet,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { analysis: AnalysisSettings::default(), physician: TemplateSet::physician(), researcher: TemplateSet::researcher() }
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("{key}: cannot parse {s:?}")))
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

impl Settings {
    pub fn templates(&self, role: Role) -> &TemplateSet {
        match role.template_role() {
            Role::Researcher => &self.researcher,
            _ => &self.physician,
        }
    }

    /// Parses configuration text. Template paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, StageError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| StageError::invalid(Stage::Config, format!("line {}: {m}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            s.set(key, value, base).map_err(err)?;
        }
        s.validate().map_err(|m| StageError::invalid(Stage::Config, m))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StageError::invalid(Stage::Config, format!("{}: {e}", path.display())))?;
        Settings::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let a = &mut self.analysis;
        match key {
            "c_grid" => a.c_grid = list(key, value)?,
            "epsilon_grid" => a.epsilon_grid = list(key, value)?,
            "vif_threshold" => a.vif_threshold = one(key, value)?,
            "min_abs_rho" => a.min_abs_rho = one(key, value)?,
            "train_fraction" => a.train_fraction = one(key, value)?,
            "folds" => a.folds = one(key, value)?,
            "max_pathway_len" => a.max_pathway_len = one(key, value)?,
            "max_pathways" => a.max_pathways = one(key, value)?,
            "whitelist" => {
                let mut w: Vec<String> = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                w.sort();
                w.dedup();
                a.whitelist = w;
            }
            "importance_mode" => a.importance_mode = value.parse()?,
            "r2_mode" => a.r2_mode = value.parse()?,
            "templates.physician" | "templates.researcher" => {
                let path = base.join(value);
                let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                let set = TemplateSet::parse(&text).map_err(|e| e.to_string())?;
                if key.ends_with("physician") {
                    self.physician = set;
                } else {
                    self.researcher = set;
                }
            }
            _ => match key.strip_prefix("threshold.") {
                Some(term) => {
                    let t = Term::parse(term).ok_or_else(|| format!("bad term {term:?}"))?;
                    a.thresholds.insert(t.key(), one(key, value)?);
                }
                None => return Err(format!("unknown key {key:?}")),
            },
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        let a = &self.analysis;
        if a.c_grid.is_empty() || a.epsilon_grid.is_empty() {
            return Err("hyperparameter grids must be non-empty".into());
        }
        if a.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) || a.epsilon_grid.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err("C must be positive and epsilon non-negative".into());
        }
        if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
            return Err("train_fraction must lie in (0, 1)".into());
        }
        if a.folds < 2 {
            return Err("folds must be at least 2".into());
        }
        if a.max_pathway_len == 0 {
            return Err("max_pathway_len must be positive".into());
        }
        if !(a.vif_threshold >= 1.0) {
            return Err("vif_threshold must be at least 1".into());
        }
        Ok(())
    }
}
