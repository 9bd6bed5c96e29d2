//! Dataset generation on top of `turbsim-core`: configuration, the batch
//! pipeline, manifest replay and statistical self-checks.

pub mod config;
mod error;
pub mod pipeline;
pub mod report;

pub use config::{MethodName, MethodParams, PipelineConfig, RangePreset};
pub use error::{PipelineError, Result};
pub use pipeline::{read_manifest, replay, replay_check, run_pipeline, DegradationRecord, ReplayCheck, Simulator};
pub use report::{validate_method, Check, ValidationReport};
