//! Experiment harness around the `mesoleads` library: configuration,
//! deterministic ensemble orchestration, statistics, file reports, and the
//! two shipped experiments (steady-state fluctuation theorems and
//! finite-time bit erasure).

pub mod config;
pub mod ensemble;
pub mod erasure;
pub mod report;
pub mod stats;
pub mod steady_ft;
pub mod unconditional_run;
