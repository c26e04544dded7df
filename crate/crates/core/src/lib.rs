//! Explainable population-health analytics: tract-level data linkage,
//! screening statistics, a linear SVR with SHAP attribution, and an
//! ontology-backed knowledge graph with a provenance-recording reasoner.

pub mod attribution;
pub mod explain;
pub mod graphstore;
mod linalg;
pub mod ontology;
pub mod regression;
pub mod stats;
pub mod tabledata;
