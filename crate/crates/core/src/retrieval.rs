//! Request encoding, thresholded retrieval from the OCR/ASR indexes and
//! type-driven selection of scene-graph texts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::decouple::{DetType, Query, RetrievalRequestSet};
use crate::ports::{Backends, PortError};
use crate::record::AuxRecord;
use crate::scene_graph::SceneGraphSummary;
use crate::vector_index::{EmbeddingVector, FlatIndex, IndexError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestEncoding {
    /// Embed `"{request} {question}"` as one text.
    #[default]
    Concat,
    /// Embed request and question separately and average the embeddings.
    Average,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Port(#[from] PortError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Unit-norm query embedding for one retrieval path. Without a request the
/// question alone is embedded.
pub fn encode_request(
    request: Option<&str>,
    q: &Query,
    backends: &Backends,
    encoding: RequestEncoding,
) -> Result<EmbeddingVector, RetrievalError> {
    let vector = match (request, encoding) {
        (None, _) => backends.embed_text(std::slice::from_ref(&q.question))?.remove(0),
        (Some(r), RequestEncoding::Concat) => backends.embed_text(&[format!("{r} {}", q.question)])?.remove(0),
        (Some(r), RequestEncoding::Average) => {
            let vs = backends.embed_text(&[r.to_string(), q.question.clone()])?;
            let dim = vs[0].dim();
            let mean: Vec<f32> = (0..dim)
                .map(|i| vs.iter().map(|v| v.values()[i]).sum::<f32>() / vs.len() as f32)
                .collect();
            EmbeddingVector::new(mean)?
        }
    };
    Ok(vector.normalize()?)
}

/// Request text for the OCR path: an explicit OCR request if the model gave
/// one, else the ASR request.
pub fn ocr_request_text(req: &RetrievalRequestSet) -> Option<&str> {
    req.ocr_request.as_deref().or(req.asr_request.as_deref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub record: AuxRecord,
    pub score: f64,
}

/// Records scoring strictly above `threshold`, in ascending time order,
/// optionally capped to the `cap` best-scoring before re-sorting.
pub fn retrieve_text(
    db: &FlatIndex,
    query: &EmbeddingVector,
    threshold: f64,
    cap: Option<usize>,
) -> Result<Vec<ScoredRecord>, RetrievalError> {
    if db.is_empty() {
        return Ok(Vec::new());
    }
    let mut hits = db.search(query, threshold)?;
    if let Some(c) = cap {
        hits.truncate(c);
    }
    let mut out: Vec<ScoredRecord> = hits
        .into_iter()
        .filter_map(|h| db.get(h.id).map(|r| ScoredRecord { record: r.clone(), score: h.score }))
        .collect();
    out.sort_by(|a, b| a.record.t_start_s.total_cmp(&b.record.t_start_s).then(a.record.id.cmp(&b.record.id)));
    Ok(out)
}

/// Scene-graph components chosen for one keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetSelection {
    pub frame_index: u64,
    pub timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loc_texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rel_texts: Vec<String>,
    /// Keyframe relevance, used to rank DET sections when trimming to a budget.
    #[serde(default)]
    pub score: f64,
}

impl DetSelection {
    pub fn is_empty(&self) -> bool {
        self.loc_texts.is_empty() && self.cnt_text.is_none() && self.rel_texts.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.loc_texts.iter().map(String::as_str).collect();
        v.extend(self.cnt_text.as_deref());
        v.extend(self.rel_texts.iter().map(String::as_str));
        v
    }
}

/// Projects every summary onto the requested components. Frames left with
/// nothing to say are omitted.
pub fn select_det(summaries: &[SceneGraphSummary], det_types: &BTreeSet<DetType>) -> Vec<DetSelection> {
    if det_types.is_empty() {
        return Vec::new();
    }
    summaries
        .iter()
        .map(|s| DetSelection {
            frame_index: s.frame_index,
            timestamp_s: s.timestamp_s,
            loc_texts: if det_types.contains(&DetType::Location) { s.loc_texts.clone() } else { Vec::new() },
            cnt_text: (det_types.contains(&DetType::Number) && !s.cnt_text.is_empty()).then(|| s.cnt_text.clone()),
            rel_texts: if det_types.contains(&DetType::Relation) { s.rel_texts.clone() } else { Vec::new() },
            score: 0.0,
        })
        .filter(|d| !d.is_empty())
        .collect()
}

/// Everything retrieved for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedAux {
    pub ocr_hits: Vec<ScoredRecord>,
    pub asr_hits: Vec<ScoredRecord>,
    pub det: Vec<DetSelection>,
}

impl RetrievedAux {
    pub fn is_empty(&self) -> bool {
        self.ocr_hits.is_empty() && self.asr_hits.is_empty() && self.det.is_empty()
    }
}
