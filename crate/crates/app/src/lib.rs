//! End-to-end pipeline, configuration and the telemetry service for the
//! ECoG-driven car controller.

pub mod config;
pub mod pipeline;
pub mod service;

pub use config::{PipelineConfig, PortKind};
pub use pipeline::{run_end_to_end, write_outputs, RunOutput, Stage, StageError};
