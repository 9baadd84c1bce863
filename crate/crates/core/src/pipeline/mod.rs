//! End-to-end orchestration: per-video database builds, single questions
//! and multiple-choice benchmark runs.

mod ask;
mod bench;
mod build;
mod config;
mod video;

use std::path::{Path, PathBuf};

pub use ask::{parse_prediction, run_ask, AskOutcome, AuditRecord, PhaseTimings, UNPARSED};
pub use bench::{load_dataset, run_bench, BenchSummary, BucketStats, QaItem, QaResult};
pub use build::{run_build, BuildMeta, BuildReport, Database, DetCacheEntry};
pub use config::PipelineConfig;
pub use video::{VideoMeta, VideoSource, VIDEO_META_FILE};

use crate::database_builder::BuildError;
use crate::decouple::EntityFilter;
use crate::ports::PortError;
use crate::retrieval::RetrievalError;
use crate::templates::{TemplateError, TemplateSet};
use crate::vector_index::IndexError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot decode video: {0}")]
    DecodeFailure(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("database {path}: {message}")]
    Database { path: PathBuf, message: String },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("dataset has no items")]
    EmptyDataset,
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Port(#[from] PortError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

/// Prompt templates and the entity filter selected by a config.
pub struct Resources {
    pub templates: TemplateSet,
    pub entity_filter: EntityFilter,
}

impl Resources {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let templates = match &cfg.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir)?,
            None => TemplateSet::builtin(),
        };
        let entity_filter = match &cfg.abstract_terms {
            Some(p) => EntityFilter::with_lexicon_file(Box::new(crate::decouple::RuleTagger), p)
                .map_err(|e| PipelineError::io(p, e))?,
            None => EntityFilter::default(),
        };
        Ok(Self { templates, entity_filter })
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    static SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let seq = SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp.{}.{seq}", std::process::id()));
    std::fs::write(&tmp, text + "\n").map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Database { path: path.to_path_buf(), message: e.to_string() })
}
