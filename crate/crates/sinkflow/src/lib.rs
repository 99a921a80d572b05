//! Scenario runner for Sinkhorn potential flows: configuration, built-in
//! scenarios, and file export (JSONL records, CSV summaries, SVG frames).

pub mod config;
pub mod export;
pub mod scenario;
pub mod svg;

pub use config::{ConfigError, ExperimentConfig, SchemeName};
pub use scenario::{preset, run_scenario, vertical_cost_curve, RunOptions, RunReport, PRESETS};
