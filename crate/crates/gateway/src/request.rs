//! The S1-S5 selections of one analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use upho_core::regression::{ImportanceMode, R2Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aim {
    #[default]
    CausalPathway,
    Descriptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Patient,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Zip,
    #[default]
    CensusTract,
}

/// Audience of an analysis. Selects template verbosity; `public` may not
/// see patient-level analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Physician,
    Researcher,
    Public,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Physician => "physician",
            Role::Researcher => "researcher",
            Role::Public => "public",
        }
    }

    /// Template set used for this role.
    pub fn template_role(self) -> Role {
        match self {
            Role::Researcher => Role::Researcher,
            _ => Role::Physician,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "physician" => Ok(Role::Physician),
            "researcher" => Ok(Role::Researcher),
            "public" => Ok(Role::Public),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    /// Outcome column, by ontology term or column name.
    pub outcome: String,
    #[serde(default)]
    pub aim: Aim,
    pub level: Level,
    /// Tract code at patient level, city name at population level.
    pub location: String,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub sdoh_filters: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance_mode: Option<ImportanceMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2_mode: Option<R2Mode>,
    #[serde(default)]
    pub role: Role,
}

impl AnalysisRequest {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}
