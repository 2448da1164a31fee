//! The `herdsim` command line: run experiments from a JSON config and turn
//! the resulting records into tables and heatmaps.

pub mod config;
pub mod output;
pub mod report;
pub mod run;
pub mod svg;
