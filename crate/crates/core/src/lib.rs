//! Retrieval-augmented long-video question answering: auxiliary text
//! databases built from OCR, ASR and object detection, queried per question
//! and fed to a vision-language model alongside sampled frames.

// `!(a > b)` is used on purpose so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod context;
pub mod database_builder;
pub mod decouple;
pub mod pipeline;
pub mod ports;
pub mod record;
pub mod retrieval;
pub mod scene_graph;
pub mod templates;
pub mod vector_index;

pub use record::{AuxKind, AuxRecord, RecordId};
pub use vector_index::{EmbeddingVector, FlatIndex, IndexEntry, IndexError, SearchHit};
