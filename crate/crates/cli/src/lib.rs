//! Batch front end for the backscatter time-scheduling game solvers:
//! scenario ingestion, random topologies, equilibrium runs and parameter
//! sweeps, with CSV/SVG/manifest artifacts.

pub mod config;
pub mod plot;
pub mod runner;
pub mod topology;
