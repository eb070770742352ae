//! Experiment harness around `metaxt-core`: run configuration, file
//! loaders, the per-seed training orchestration, and result emission.

pub mod config;
pub mod loaders;
pub mod report;
pub mod runner;
