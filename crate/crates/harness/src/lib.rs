//! Experiment runner for content/style prior reconstruction studies.

pub mod analysis;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod run;
pub mod spec;

pub use spec::{ExperimentKind, ExperimentSpec};
