//! Pipeline errors tagged with the stage that raised them.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Pattern,
    Simulate,
    Demux,
    Decode,
    Range,
    Merge,
    Metrics,
    Analyze,
    Io,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Pattern => "pattern",
            Stage::Simulate => "simulate",
            Stage::Demux => "demux",
            Stage::Decode => "decode",
            Stage::Range => "range",
            Stage::Merge => "merge",
            Stage::Metrics => "metrics",
            Stage::Analyze => "analyze",
            Stage::Io => "io",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}

/// Attaches a stage to any error.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}
