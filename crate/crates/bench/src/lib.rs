//! Experiment runner for the flowalign lab: configuration, metrics, sweeps,
//! the control-problem battery and CSV/SVG output.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod oc_battery;
pub mod run;
pub mod stats;
pub mod svg;
pub mod sweep;
