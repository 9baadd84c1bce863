//! Builders for the per-video databases: OCR and ASR vector indexes, and the
//! detection database restricted to prompt-relevant keyframes.

use serde::{Deserialize, Serialize};

use crate::ports::{AudioRef, AsrSegment, Backends, FrameRef, PortError};
use crate::record::{AuxKind, AuxRecord, RecordId};
use crate::scene_graph::FrameDetections;
use crate::vector_index::{FlatIndex, IndexEntry, IndexError};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Port(#[from] PortError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("invalid build input: {0}")]
    Invalid(String),
}

/// Output of a builder along with non-fatal problems it skipped over.
#[derive(Debug, Clone)]
pub struct Built<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// `n` indices spread evenly over `0..total`, always including both ends when
/// `n >= 2`. Returns every index when `n >= total`.
pub fn sample_uniform(total: usize, n: usize) -> Vec<usize> {
    if total == 0 || n == 0 {
        return Vec::new();
    }
    if n >= total {
        return (0..total).collect();
    }
    if n == 1 {
        return vec![(total - 1) / 2];
    }
    let step = (total - 1) as f64 / (n - 1) as f64;
    (0..n).map(|k| (k as f64 * step).round() as usize).collect()
}

fn normalized_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn embed_records(records: Vec<AuxRecord>, backends: &Backends) -> Result<FlatIndex, BuildError> {
    let mut index = FlatIndex::new();
    if records.is_empty() {
        return Ok(index);
    }
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let vectors = backends.embed_text(&texts)?;
    index.add(vectors.into_iter().zip(records).map(|(vector, record)| IndexEntry { vector, record }).collect())?;
    Ok(index)
}

/// One record per frame that produced text, lines joined in reading order.
/// Consecutive sampled frames with the same normalized text keep only the
/// earliest.
pub fn ocr_records(frames: &[FrameRef], lines: &[crate::ports::OcrLine]) -> Vec<AuxRecord> {
    let mut out: Vec<AuxRecord> = Vec::new();
    let mut prev: Option<String> = None;
    for f in frames {
        let text = lines
            .iter()
            .filter(|l| l.frame_index == f.frame_index)
            .map(|l| l.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            prev = None;
            continue;
        }
        let norm = normalized_text(&text);
        if prev.as_deref() == Some(norm.as_str()) {
            continue;
        }
        prev = Some(norm);
        out.push(AuxRecord::frame(RecordId(out.len() as u64), AuxKind::Ocr, f.frame_index, f.timestamp_s, text));
    }
    out
}

pub fn build_ocr_db(frames: &[FrameRef], backends: &Backends) -> Result<Built<FlatIndex>, BuildError> {
    if frames.is_empty() {
        return Ok(Built { value: FlatIndex::new(), warnings: Vec::new() });
    }
    let mut warnings = Vec::new();
    let lines = match backends.ocr(frames) {
        Ok(lines) => lines,
        Err(batch_err) => {
            // fall back to frame-at-a-time so one bad frame does not sink the rest
            let mut lines = Vec::new();
            let mut failed = 0;
            let mut last_err = batch_err;
            for f in frames {
                match backends.ocr(std::slice::from_ref(f)) {
                    Ok(l) => lines.extend(l),
                    Err(e) => {
                        failed += 1;
                        let msg = format!("OCR failed on frame {}: {e}", f.frame_index);
                        log::warn!("{msg}");
                        warnings.push(msg);
                        last_err = e;
                    }
                }
            }
            if failed == frames.len() {
                return Err(last_err.into());
            }
            lines
        }
    };
    let index = embed_records(ocr_records(frames, &lines), backends)?;
    Ok(Built { value: index, warnings })
}

/// Greedily packs consecutive segments into chunks of at most `max_chars`
/// characters (segment texts joined by a single space). A segment longer than
/// `max_chars` forms its own chunk and is never split.
pub fn chunk_asr(segments: &[AsrSegment], max_chars: usize) -> Vec<AuxRecord> {
    let max_chars = max_chars.max(1);
    let mut out = Vec::new();
    let mut cur: Option<(f64, f64, String, usize)> = None;
    for s in segments {
        let text = s.text.trim();
        if text.is_empty() {
            continue;
        }
        let n = text.chars().count();
        cur = match cur.take() {
            Some((start, _, mut buf, len)) if len + 1 + n <= max_chars => {
                buf.push(' ');
                buf.push_str(text);
                Some((start, s.t_end_s, buf, len + 1 + n))
            }
            prev => {
                if let Some((start, end, buf, _)) = prev {
                    out.push(AuxRecord::span(RecordId(out.len() as u64), start, end, buf));
                }
                Some((s.t_start_s, s.t_end_s, text.to_string(), n))
            }
        };
    }
    if let Some((start, end, buf, _)) = cur {
        out.push(AuxRecord::span(RecordId(out.len() as u64), start, end, buf));
    }
    out
}

/// Transcribe, chunk, embed. A missing audio track gives an empty index.
pub fn build_asr_db(audio: &AudioRef, backends: &Backends, max_chars: usize) -> Result<Built<FlatIndex>, BuildError> {
    let segments = match backends.asr(audio) {
        Ok(s) => s,
        Err(PortError::NoAudioTrack) => {
            return Ok(Built { value: FlatIndex::new(), warnings: vec!["no audio track; ASR database is empty".into()] })
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Built { value: embed_records(chunk_asr(&segments, max_chars), backends)?, warnings: Vec::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeParams {
    pub threshold: f64,
    pub beta: f64,
    pub base_frames: u32,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        Self { threshold: 0.3, beta: 4.0, base_frames: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSelection {
    /// Frame indices of the selected keyframes, in sampling order.
    pub selected: Vec<u64>,
    /// Per-frame mean score over prompts.
    pub raw_scores: Vec<f64>,
    pub normalized_scores: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub base_frames: u32,
    pub m: usize,
    pub threshold: f64,
}

/// Keyframe math on a prompt-by-frame score matrix.
///
/// Each frame's score is its mean over prompts; scores are rescaled as
/// `alpha * s_j / sum_k s_k` with `alpha = beta * m / base_frames`, and frames
/// scoring strictly above the threshold are selected. A non-positive score
/// sum selects nothing.
pub fn keyframes_from_scores(scores: &[Vec<f64>], frame_indices: &[u64], params: &KeyframeParams) -> KeyframeSelection {
    let m = frame_indices.len();
    let n = scores.len().max(1) as f64;
    let raw_scores: Vec<f64> = (0..m).map(|j| scores.iter().map(|row| row[j]).sum::<f64>() / n).collect();
    let alpha = params.beta * m as f64 / f64::from(params.base_frames.max(1));
    let total: f64 = raw_scores.iter().sum();
    let normalized_scores: Vec<f64> = if total > 0.0 {
        raw_scores.iter().map(|s| alpha * s / total).collect()
    } else {
        vec![0.0; m]
    };
    let selected = if total > 0.0 {
        frame_indices
            .iter()
            .zip(&normalized_scores)
            .filter(|(_, s)| **s > params.threshold)
            .map(|(f, _)| *f)
            .collect()
    } else {
        Vec::new()
    };
    KeyframeSelection {
        selected,
        raw_scores,
        normalized_scores,
        alpha,
        beta: params.beta,
        base_frames: params.base_frames,
        m,
        threshold: params.threshold,
    }
}

/// Scores every frame against the (already prefixed) prompts and selects
/// keyframes.
pub fn select_keyframes(
    frames: &[FrameRef],
    clip_prompts: &[String],
    backends: &Backends,
    params: &KeyframeParams,
) -> Result<KeyframeSelection, BuildError> {
    if frames.is_empty() || clip_prompts.is_empty() {
        return Err(BuildError::Invalid("keyframe selection needs frames and prompts".into()));
    }
    let scores = backends.clip_scores(frames, clip_prompts)?;
    let idx: Vec<u64> = frames.iter().map(|f| f.frame_index).collect();
    Ok(keyframes_from_scores(&scores, &idx, params))
}

/// Runs the detector on the keyframes only. An empty keyframe set returns an
/// empty database without touching the detector. Detections with invalid
/// boxes are dropped with a warning.
pub fn build_det_db(keyframes: &[FrameRef], entities: &[String], backends: &Backends) -> Result<Built<Vec<FrameDetections>>, BuildError> {
    if keyframes.is_empty() {
        return Ok(Built { value: Vec::new(), warnings: Vec::new() });
    }
    if entities.is_empty() {
        return Err(BuildError::Invalid("detection needs at least one entity prompt".into()));
    }
    let mut warnings = Vec::new();
    let dets = backends.detect(keyframes, entities)?;
    let mut frames: Vec<FrameDetections> = keyframes
        .iter()
        .map(|f| FrameDetections { frame_index: f.frame_index, timestamp_s: f.timestamp_s, detections: Vec::new() })
        .collect();
    for d in dets {
        if !d.bbox.is_valid() {
            let msg = format!("dropping detection {} on frame {}: invalid box", d.raw_text(), d.frame_index);
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        if let Some(f) = frames.iter_mut().find(|f| f.frame_index == d.frame_index) {
            f.detections.push(d);
        }
    }
    Ok(Built { value: frames, warnings })
}
