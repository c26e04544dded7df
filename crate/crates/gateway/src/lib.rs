//! Analysis pipeline, report store, HTTP API and command-line interface.

pub mod cli;
pub mod config;
pub mod demo;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod request;
pub mod server;
pub mod store;
pub mod workspace;
