//! Orchestration and I/O around the library stages.

pub mod adapter;
pub mod config;
pub mod eval;
pub mod events;
pub mod io;
pub mod pipeline;

pub use config::PipelineConfig;
pub use events::{EventKind, EventLog, PipelineEvent};
pub use pipeline::{run_pipeline, run_stream, stereo_split, AppError, RunOutcome};
