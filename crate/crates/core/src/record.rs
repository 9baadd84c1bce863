//! Timestamped auxiliary text snippets shared by the databases, retrieval and
//! context assembly.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque identifier of a stored record. Unique within one database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Ocr,
    Asr,
    Det,
}

impl AuxKind {
    pub fn label(self) -> &'static str {
        match self {
            AuxKind::Ocr => "OCR",
            AuxKind::Asr => "ASR",
            AuxKind::Det => "DET",
        }
    }

    /// Ordering used to break timestamp ties when merging kinds.
    pub fn priority(self) -> u8 {
        match self {
            AuxKind::Ocr => 0,
            AuxKind::Det => 1,
            AuxKind::Asr => 2,
        }
    }
}

/// One auxiliary text snippet: an OCR frame text, an ASR chunk or a rendered
/// scene-graph text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxRecord {
    pub id: RecordId,
    pub kind: AuxKind,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub frame_index: Option<u64>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("record {0} has empty text")]
    EmptyText(RecordId),
    #[error("asr record {0} must have t_end_s > t_start_s")]
    BadSpan(RecordId),
    #[error("frame record {0} needs a frame index and a point timestamp")]
    BadFrameStamp(RecordId),
}

impl AuxRecord {
    pub fn frame(id: RecordId, kind: AuxKind, frame_index: u64, timestamp_s: f64, text: String) -> Self {
        Self {
            id,
            kind,
            t_start_s: timestamp_s,
            t_end_s: timestamp_s,
            frame_index: Some(frame_index),
            text,
        }
    }

    pub fn span(id: RecordId, t_start_s: f64, t_end_s: f64, text: String) -> Self {
        Self {
            id,
            kind: AuxKind::Asr,
            t_start_s,
            t_end_s,
            frame_index: None,
            text,
        }
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.text.trim().is_empty() {
            return Err(RecordError::EmptyText(self.id));
        }
        match self.kind {
            AuxKind::Asr if !(self.t_end_s > self.t_start_s) => Err(RecordError::BadSpan(self.id)),
            AuxKind::Ocr | AuxKind::Det
                if self.frame_index.is_none() || self.t_start_s != self.t_end_s =>
            {
                Err(RecordError::BadFrameStamp(self.id))
            }
            _ => Ok(()),
        }
    }
}
