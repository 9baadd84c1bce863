//! Model ports: OCR, ASR, open-vocabulary detection, text embedding,
//! image-text scoring and video-language generation.
//!
//! Each port is a trait so the engine can run against HTTP backends speaking
//! the [`wire`] protocol or against the deterministic [`mock`] backend.
//! [`Backends`] bundles one implementation per port and validates every
//! response before the rest of the engine sees it.

pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::vector_index::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    Ocr,
    Asr,
    Detect,
    EmbedText,
    ClipScore,
    LvlmGenerate,
}

impl PortKind {
    pub const ALL: [PortKind; 6] = [
        PortKind::Ocr,
        PortKind::Asr,
        PortKind::Detect,
        PortKind::EmbedText,
        PortKind::ClipScore,
        PortKind::LvlmGenerate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PortKind::Ocr => "ocr",
            PortKind::Asr => "asr",
            PortKind::Detect => "detect",
            PortKind::EmbedText => "embed_text",
            PortKind::ClipScore => "clip_score",
            PortKind::LvlmGenerate => "lvlm_generate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Environment variable overriding this port's base URL.
    pub fn env_var(self) -> &'static str {
        match self {
            PortKind::Ocr => "VIDRAG_OCR_URL",
            PortKind::Asr => "VIDRAG_ASR_URL",
            PortKind::Detect => "VIDRAG_DET_URL",
            PortKind::EmbedText => "VIDRAG_EMBED_URL",
            PortKind::ClipScore => "VIDRAG_CLIP_URL",
            PortKind::LvlmGenerate => "VIDRAG_LVLM_URL",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PortKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PortError {
    #[error("{kind} backend unavailable: {message}")]
    BackendUnavailable { kind: PortKind, message: String },
    #[error("{kind} backend sent a malformed response: {message}")]
    MalformedResponse { kind: PortKind, message: String },
    #[error("{kind} backend error {code}: {message}")]
    Remote { kind: PortKind, code: String, message: String },
    #[error("video has no audio track")]
    NoAudioTrack,
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("embedding batch has mixed dimensions ({first} vs {other})")]
    DimensionMismatch { first: usize, other: usize },
    #[error("invalid {kind} request: {message}")]
    InvalidRequest { kind: PortKind, message: String },
}

impl PortError {
    pub fn malformed(kind: PortKind, message: impl Into<String>) -> Self {
        PortError::MalformedResponse { kind, message: message.into() }
    }

    pub fn unavailable(kind: PortKind, message: impl Into<String>) -> Self {
        PortError::BackendUnavailable { kind, message: message.into() }
    }

    fn invalid(kind: PortKind, message: impl Into<String>) -> Self {
        PortError::InvalidRequest { kind, message: message.into() }
    }
}

/// One sampled frame. `image_ref` is a path to the frame image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub image_ref: PathBuf,
}

impl FrameRef {
    /// File name used as the fixture key by mock backends.
    pub fn key(&self) -> String {
        file_key(&self.image_ref)
    }
}

pub(crate) fn file_key(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

/// The audio stream of a video; `path` is `None` when the video has no track.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AudioRef {
    pub path: Option<PathBuf>,
}

impl AudioRef {
    pub fn none() -> Self {
        Self { path: None }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self { path: Some(path.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrLine {
    pub frame_index: u64,
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrSegment {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub text: String,
}

/// Axis-aligned box in the raw detector convention: top-left corner, then
/// horizontal extent (`length`) and vertical extent (`width`), in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub length: f64,
    pub width: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox { x_min: a[0], y_min: a[1], length: a[2], width: a[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.length, b.width]
    }
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, length: f64, width: f64) -> Self {
        Self { x_min, y_min, length, width }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x_min + self.length / 2.0, self.y_min + self.width / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x_min + self.length).min(other.x_min + other.length) - self.x_min.max(other.x_min);
        let iy = (self.y_min + self.width).min(other.y_min + other.width) - self.y_min.max(other.y_min);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.length, self.width].iter().all(|v| v.is_finite())
            && self.length > 0.0
            && self.width > 0.0
            && self.x_min >= 0.0
            && self.y_min >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub frame_index: u64,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    /// `category: [x_min, y_min, length, width]`
    pub fn raw_text(&self) -> String {
        let b = &self.bbox;
        format!("{}: [{}, {}, {}, {}]", self.category, b.x_min, b.y_min, b.length, b.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorEndpoint {
    pub kind: PortKind,
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub bearer_token: Option<String>,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    3
}

impl ExtractorEndpoint {
    pub fn new(kind: PortKind, base_url: impl Into<String>) -> Self {
        Self {
            kind,
            base_url: base_url.into(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            bearer_token: None,
        }
    }
}

pub trait OcrPort: Send + Sync {
    fn ocr(&self, frames: &[FrameRef]) -> Result<Vec<OcrLine>, PortError>;
}

pub trait AsrPort: Send + Sync {
    fn asr(&self, audio: &AudioRef) -> Result<Vec<AsrSegment>, PortError>;
}

pub trait DetectPort: Send + Sync {
    fn detect(&self, frames: &[FrameRef], entity_prompts: &[String]) -> Result<Vec<Detection>, PortError>;
}

pub trait EmbedPort: Send + Sync {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, PortError>;
}

pub trait ClipPort: Send + Sync {
    /// Score matrix with one row per prompt and one column per frame.
    fn clip_scores(&self, frames: &[FrameRef], prompts: &[String]) -> Result<Vec<Vec<f64>>, PortError>;
}

pub trait LvlmPort: Send + Sync {
    fn generate(&self, frames: &[FrameRef], prompt: &str) -> Result<String, PortError>;
}

/// Something that implements every port, like the mock or a single
/// multiplexing HTTP endpoint.
pub trait AllPorts: OcrPort + AsrPort + DetectPort + EmbedPort + ClipPort + LvlmPort {}
impl<T: OcrPort + AsrPort + DetectPort + EmbedPort + ClipPort + LvlmPort> AllPorts for T {}

/// One implementation per port, plus per-kind call counters. All responses
/// pass through validation here.
#[derive(Clone)]
pub struct Backends {
    pub ocr: Arc<dyn OcrPort>,
    pub asr: Arc<dyn AsrPort>,
    pub detect: Arc<dyn DetectPort>,
    pub embed: Arc<dyn EmbedPort>,
    pub clip: Arc<dyn ClipPort>,
    pub lvlm: Arc<dyn LvlmPort>,
    fingerprint: String,
    calls: Arc<[AtomicU64; 6]>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends").field("fingerprint", &self.fingerprint).finish()
    }
}

impl Backends {
    pub fn from_all<T: AllPorts + 'static>(ports: Arc<T>, fingerprint: impl Into<String>) -> Self {
        Self {
            ocr: ports.clone(),
            asr: ports.clone(),
            detect: ports.clone(),
            embed: ports.clone(),
            clip: ports.clone(),
            lvlm: ports,
            fingerprint: fingerprint.into(),
            calls: Arc::new(Default::default()),
        }
    }

    pub fn mock(fixtures: mock::MockFixtures) -> Self {
        let fp = format!("mock:{}", fixtures.fingerprint());
        Self::from_all(Arc::new(mock::MockBackend::new(fixtures)), fp)
    }

    pub fn http(endpoints: &[ExtractorEndpoint]) -> Result<Self, PortError> {
        let find = |kind: PortKind| -> Result<Arc<http::HttpPort>, PortError> {
            let ep = endpoints
                .iter()
                .find(|e| e.kind == kind)
                .ok_or_else(|| PortError::unavailable(kind, "no endpoint configured"))?;
            Ok(Arc::new(http::HttpPort::new(ep.clone())?))
        };
        let mut fp: Vec<String> = endpoints.iter().map(|e| format!("{}={}", e.kind, e.base_url)).collect();
        fp.sort();
        Ok(Self {
            ocr: find(PortKind::Ocr)?,
            asr: find(PortKind::Asr)?,
            detect: find(PortKind::Detect)?,
            embed: find(PortKind::EmbedText)?,
            clip: find(PortKind::ClipScore)?,
            lvlm: find(PortKind::LvlmGenerate)?,
            fingerprint: fp.join(";"),
            calls: Arc::new(Default::default()),
        })
    }

    /// Identifies the backend configuration for cache keys and build metadata.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn calls(&self, kind: PortKind) -> u64 {
        self.calls[kind.slot()].load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> u64 {
        PortKind::ALL.iter().map(|k| self.calls(*k)).sum()
    }

    fn count(&self, kind: PortKind) {
        self.calls[kind.slot()].fetch_add(1, Ordering::SeqCst);
    }

    pub fn ocr(&self, frames: &[FrameRef]) -> Result<Vec<OcrLine>, PortError> {
        let kind = PortKind::Ocr;
        if frames.is_empty() {
            return Err(PortError::invalid(kind, "no frames"));
        }
        self.count(kind);
        let lines = self.ocr.ocr(frames)?;
        for l in &lines {
            if !frames.iter().any(|f| f.frame_index == l.frame_index) {
                return Err(PortError::malformed(kind, format!("line for unknown frame {}", l.frame_index)));
            }
            if l.text.trim().is_empty() {
                return Err(PortError::malformed(kind, "empty text line"));
            }
            if !(0.0..=1.0).contains(&l.confidence) {
                return Err(PortError::malformed(kind, format!("confidence {} outside [0, 1]", l.confidence)));
            }
        }
        Ok(lines)
    }

    pub fn asr(&self, audio: &AudioRef) -> Result<Vec<AsrSegment>, PortError> {
        let kind = PortKind::Asr;
        self.count(kind);
        let segs = self.asr.asr(audio)?;
        let mut prev_end = f64::NEG_INFINITY;
        for s in &segs {
            if !(s.t_end_s > s.t_start_s) || !s.t_start_s.is_finite() || !s.t_end_s.is_finite() {
                return Err(PortError::malformed(kind, format!("bad segment span [{}, {}]", s.t_start_s, s.t_end_s)));
            }
            if s.t_start_s < prev_end {
                return Err(PortError::malformed(kind, "segments overlap or are out of order"));
            }
            if s.text.trim().is_empty() {
                return Err(PortError::malformed(kind, "empty segment text"));
            }
            prev_end = s.t_end_s;
        }
        Ok(segs)
    }

    /// Detections are checked against the prompt set; boxes are validated by
    /// the caller so a single bad box does not discard the whole response.
    pub fn detect(&self, frames: &[FrameRef], entity_prompts: &[String]) -> Result<Vec<Detection>, PortError> {
        let kind = PortKind::Detect;
        if entity_prompts.is_empty() {
            return Err(PortError::invalid(kind, "entity prompt set is empty"));
        }
        if frames.is_empty() {
            return Err(PortError::invalid(kind, "no frames"));
        }
        self.count(kind);
        let dets = self.detect.detect(frames, entity_prompts)?;
        for d in &dets {
            if !entity_prompts.contains(&d.category) {
                return Err(PortError::malformed(kind, format!("category {:?} was not prompted", d.category)));
            }
            if !frames.iter().any(|f| f.frame_index == d.frame_index) {
                return Err(PortError::malformed(kind, format!("detection on unknown frame {}", d.frame_index)));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(PortError::malformed(kind, format!("score {} outside [0, 1]", d.score)));
            }
        }
        Ok(dets)
    }

    pub fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, PortError> {
        let kind = PortKind::EmbedText;
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(PortError::invalid(kind, "texts must be non-empty"));
        }
        self.count(kind);
        let raw = self.embed.embed_text(texts)?;
        if raw.len() != texts.len() {
            return Err(PortError::malformed(kind, format!("{} embeddings for {} texts", raw.len(), texts.len())));
        }
        let first = raw[0].len();
        let mut out = Vec::with_capacity(raw.len());
        for v in raw {
            if v.len() != first {
                return Err(PortError::DimensionMismatch { first, other: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(PortError::malformed(kind, "non-finite embedding component"));
            }
            out.push(EmbeddingVector::new(v).map_err(|e| PortError::malformed(kind, e.to_string()))?);
        }
        Ok(out)
    }

    pub fn clip_scores(&self, frames: &[FrameRef], prompts: &[String]) -> Result<Vec<Vec<f64>>, PortError> {
        let kind = PortKind::ClipScore;
        if frames.is_empty() || prompts.is_empty() {
            return Err(PortError::invalid(kind, "frames and prompts must be non-empty"));
        }
        self.count(kind);
        let m = self.clip.clip_scores(frames, prompts)?;
        if m.len() != prompts.len() || m.iter().any(|row| row.len() != frames.len()) {
            return Err(PortError::malformed(kind, format!("expected {}x{} score matrix", prompts.len(), frames.len())));
        }
        if m.iter().flatten().any(|s| !s.is_finite()) {
            return Err(PortError::malformed(kind, "non-finite score"));
        }
        Ok(m)
    }

    pub fn generate(&self, frames: &[FrameRef], prompt: &str) -> Result<String, PortError> {
        let kind = PortKind::LvlmGenerate;
        if prompt.trim().is_empty() {
            return Err(PortError::invalid(kind, "empty prompt"));
        }
        self.count(kind);
        self.lvlm.generate(frames, prompt)
    }
}
