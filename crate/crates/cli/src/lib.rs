//! Experiment runner for the distributed greedy protocol: config files,
//! scenario sweeps, trace files and JSON reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod json;
pub mod trace_io;
