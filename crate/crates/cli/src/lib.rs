//! Seeded end-to-end runs of the manifold superposition benchmark.

pub mod config;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod theory;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use pipeline::{discover_external, run_pipeline, Layout, Runner, Target};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },

    #[error(transparent)]
    Core(#[from] msb_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for anything that failed while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(msb_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}
