//! Deterministic fixture-driven backend.
//!
//! Every answer is a pure function of the request and the fixture set, so
//! whole-pipeline runs under the mock are byte-reproducible. Frames and audio
//! are looked up by file name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    AsrPort, AsrSegment, AudioRef, BBox, ClipPort, Detection, DetectPort, EmbedPort, FrameRef, LvlmPort, OcrLine,
    OcrPort, PortError, PortKind,
};

pub const FIXTURE_FILE: &str = "mock.json";
const CLIP_PREFIX: &str = "A picture of ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockLine {
    pub text: String,
    #[serde(default = "default_score")]
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockDetection {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_score() -> f64 {
    0.9
}

/// A scripted reply chosen when the prompt contains `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedReply {
    pub contains: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockLvlm {
    /// Rules for frame-free (query decoupling) calls, first match wins.
    pub decouple: Vec<ScriptedReply>,
    pub decouple_default: String,
    /// Rules for calls that carry frames.
    pub answers: Vec<ScriptedReply>,
    pub default_answer: String,
    /// Prompts longer than this (in chars) fail with `ContextOverflow`.
    pub max_prompt_chars: Option<usize>,
}

impl Default for MockLvlm {
    fn default() -> Self {
        Self {
            decouple: Vec::new(),
            decouple_default: r#"{"ASR": null, "DET": null, "TYPE": null}"#.to_string(),
            answers: Vec::new(),
            default_answer: "A".to_string(),
            max_prompt_chars: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockFixtures {
    pub embed_dim: usize,
    /// Frame file name -> recognized lines.
    pub ocr: BTreeMap<String, Vec<MockLine>>,
    /// Audio file name -> transcript. Unknown audio transcribes as silence.
    pub asr: BTreeMap<String, Vec<AsrSegment>>,
    /// Frame file name -> objects present. Only prompted categories are returned.
    pub detections: BTreeMap<String, Vec<MockDetection>>,
    /// Frame file name -> entity -> score. Missing pairs fall back to
    /// `clip_baseline`, plus `clip_match_bonus` when the frame holds a matching detection.
    pub clip: BTreeMap<String, BTreeMap<String, f64>>,
    pub clip_baseline: f64,
    pub clip_match_bonus: f64,
    pub lvlm: MockLvlm,
    /// Kinds that always fail with `BackendUnavailable`.
    pub fail: Vec<PortKind>,
    /// Kinds that return a response failing validation.
    pub malformed: Vec<PortKind>,
    /// Frame file names whose OCR fails.
    pub fail_frames: Vec<String>,
}

impl Default for MockFixtures {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            ocr: BTreeMap::new(),
            asr: BTreeMap::new(),
            detections: BTreeMap::new(),
            clip: BTreeMap::new(),
            clip_baseline: 0.2,
            clip_match_bonus: 0.8,
            lvlm: MockLvlm::default(),
            fail: Vec::new(),
            malformed: Vec::new(),
            fail_frames: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

impl MockFixtures {
    /// Loads `mock.json` from a fixture directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let file = if path.is_dir() { path.join(FIXTURE_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|source| FixtureError::Io { path: file.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| FixtureError::Parse { path: file.display().to_string(), source })
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("fixtures serialize");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    fixtures: MockFixtures,
}

impl MockBackend {
    pub fn new(fixtures: MockFixtures) -> Self {
        Self { fixtures }
    }

    pub fn fixtures(&self) -> &MockFixtures {
        &self.fixtures
    }

    fn check(&self, kind: PortKind) -> Result<bool, PortError> {
        if self.fixtures.fail.contains(&kind) {
            return Err(PortError::unavailable(kind, "injected failure"));
        }
        Ok(self.fixtures.malformed.contains(&kind))
    }

    fn clip_score(&self, frame: &FrameRef, prompt: &str) -> f64 {
        let entity = prompt.strip_prefix(CLIP_PREFIX).unwrap_or(prompt);
        let key = frame.key();
        if let Some(s) = self.fixtures.clip.get(&key).and_then(|m| m.get(entity)) {
            return *s;
        }
        let matched = self
            .fixtures
            .detections
            .get(&key)
            .is_some_and(|ds| ds.iter().any(|d| d.category.eq_ignore_ascii_case(entity)));
        self.fixtures.clip_baseline + if matched { self.fixtures.clip_match_bonus } else { 0.0 }
    }
}

impl OcrPort for MockBackend {
    fn ocr(&self, frames: &[FrameRef]) -> Result<Vec<OcrLine>, PortError> {
        let malformed = self.check(PortKind::Ocr)?;
        let mut out = Vec::new();
        for f in frames {
            let key = f.key();
            if self.fixtures.fail_frames.contains(&key) {
                return Err(PortError::unavailable(PortKind::Ocr, format!("injected failure on {key}")));
            }
            for l in self.fixtures.ocr.get(&key).into_iter().flatten() {
                out.push(OcrLine {
                    frame_index: f.frame_index,
                    text: l.text.clone(),
                    confidence: if malformed { 7.0 } else { l.confidence },
                });
            }
        }
        Ok(out)
    }
}

impl AsrPort for MockBackend {
    fn asr(&self, audio: &AudioRef) -> Result<Vec<AsrSegment>, PortError> {
        let malformed = self.check(PortKind::Asr)?;
        let path = audio.path.as_ref().ok_or(PortError::NoAudioTrack)?;
        let mut segs = self.fixtures.asr.get(&super::file_key(path)).cloned().unwrap_or_default();
        if malformed {
            segs.reverse();
            segs.push(AsrSegment { t_start_s: 5.0, t_end_s: 1.0, text: "x".into() });
        }
        Ok(segs)
    }
}

impl DetectPort for MockBackend {
    fn detect(&self, frames: &[FrameRef], entity_prompts: &[String]) -> Result<Vec<Detection>, PortError> {
        let malformed = self.check(PortKind::Detect)?;
        let mut out = Vec::new();
        for f in frames {
            for d in self.fixtures.detections.get(&f.key()).into_iter().flatten() {
                if let Some(p) = entity_prompts.iter().find(|p| p.eq_ignore_ascii_case(&d.category)) {
                    out.push(Detection {
                        frame_index: f.frame_index,
                        category: if malformed { format!("{CLIP_PREFIX}{p}") } else { p.clone() },
                        bbox: d.bbox,
                        score: d.score,
                    });
                }
            }
        }
        Ok(out)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "of", "in", "on", "at", "to", "and", "or", "what",
    "which", "who", "how", "does", "do", "did", "this", "that", "it", "its", "for", "with", "about", "as",
    "by", "from", "video", "there",
];

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed bag-of-words over lowercase alphanumeric tokens, stopwords removed
/// and a trailing plural `s` stripped. Texts sharing content words get
/// positive cosine similarity.
pub fn hashed_bow(text: &str, dim: usize) -> Vec<f32> {
    let dim = dim.max(1);
    let mut v = vec![0f32; dim];
    let lowered = text.to_lowercase();
    let mut any = false;
    for tok in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        if STOPWORDS.contains(&tok) {
            continue;
        }
        let stem = if tok.len() > 3 && tok.ends_with('s') && !tok.ends_with("ss") { &tok[..tok.len() - 1] } else { tok };
        v[(fnv1a(stem) % dim as u64) as usize] += 1.0;
        any = true;
    }
    if !any {
        v[(fnv1a(&lowered) % dim as u64) as usize] = 1.0;
    }
    v
}

impl EmbedPort for MockBackend {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, PortError> {
        let malformed = self.check(PortKind::EmbedText)?;
        let mut out: Vec<Vec<f32>> = texts.iter().map(|t| hashed_bow(t, self.fixtures.embed_dim)).collect();
        if malformed {
            out.pop();
        }
        Ok(out)
    }
}

impl ClipPort for MockBackend {
    fn clip_scores(&self, frames: &[FrameRef], prompts: &[String]) -> Result<Vec<Vec<f64>>, PortError> {
        let malformed = self.check(PortKind::ClipScore)?;
        let mut m: Vec<Vec<f64>> =
            prompts.iter().map(|p| frames.iter().map(|f| self.clip_score(f, p)).collect()).collect();
        if malformed {
            m[0].pop();
        }
        Ok(m)
    }
}

impl LvlmPort for MockBackend {
    fn generate(&self, frames: &[FrameRef], prompt: &str) -> Result<String, PortError> {
        self.check(PortKind::LvlmGenerate)?;
        let l = &self.fixtures.lvlm;
        if let Some(max) = l.max_prompt_chars {
            let n = prompt.chars().count();
            if n > max {
                return Err(PortError::ContextOverflow(format!("{n} chars exceeds limit {max}")));
            }
        }
        let (rules, fallback) =
            if frames.is_empty() { (&l.decouple, &l.decouple_default) } else { (&l.answers, &l.default_answer) };
        Ok(rules.iter().find(|r| prompt.contains(&r.contains)).map_or(fallback, |r| &r.reply).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ports::Backends;

    fn frame(i: u64, name: &str) -> FrameRef {
        FrameRef { frame_index: i, timestamp_s: i as f64, image_ref: format!("/x/{name}").into() }
    }

    fn fixtures() -> MockFixtures {
        serde_json::from_value(serde_json::json!({
            "ocr": {"sale.png": [{"text": "SALE 50%"}]},
            "asr": {"talk.wav": [
                {"t_start_s": 0.0, "t_end_s": 2.0, "text": "hello there"},
                {"t_start_s": 3.0, "t_end_s": 5.0, "text": "the price is ten dollars"}
            ]},
            "detections": {"street.png": [{"category": "red car", "box": [1, 2, 3, 4]}, {"category": "dog", "box": [5, 5, 2, 2]}]},
            "clip": {"t.png": {"cat": 0.5}},
            "lvlm": {"decouple_default": "{\"ASR\": \"x\"}", "answers": [{"contains": "price", "reply": "B"}],
                      "max_prompt_chars": 50}
        }))
        .unwrap()
    }

    #[test]
    fn ocr_fixture() {
        let b = Backends::mock(fixtures());
        let lines = b.ocr(&[frame(0, "blank.png"), frame(3, "sale.png")]).unwrap();
        assert_eq!(lines, vec![OcrLine { frame_index: 3, text: "SALE 50%".into(), confidence: 0.9 }]);
        assert!(b.ocr(&[frame(0, "blank.png")]).unwrap().is_empty());
    }

    #[test]
    fn asr_fixture() {
        let b = Backends::mock(fixtures());
        assert_eq!(b.asr(&AudioRef::file("/a/talk.wav")).unwrap().len(), 2);
        assert!(b.asr(&AudioRef::file("/a/silent.wav")).unwrap().is_empty());
        assert_eq!(b.asr(&AudioRef::none()), Err(PortError::NoAudioTrack));
    }

    #[test]
    fn detect_only_prompted() {
        let b = Backends::mock(fixtures());
        let d = b.detect(&[frame(2, "street.png")], &["red car".into()]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].category, "red car");
        assert!(b.detect(&[frame(2, "empty.png")], &["red car".into()]).unwrap().is_empty());
    }

    #[test]
    fn embeddings_deterministic() {
        let b = Backends::mock(fixtures());
        let v = b.embed_text(&["a".into(), "a".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        let v = b.embed_text(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0].dim(), v[1].dim());
    }

    #[test]
    fn clip_table_and_fallback() {
        let b = Backends::mock(fixtures());
        let frames = [frame(0, "t.png"), frame(1, "street.png"), frame(2, "none.png")];
        let m = b.clip_scores(&frames, &["A picture of cat".into(), "A picture of dog".into(), "A picture of dog".into()]).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0], vec![0.5, 0.2, 0.2]);
        assert_eq!(m[1], vec![0.2, 1.0, 0.2]);
        assert_eq!(m[1], m[2]);
    }

    #[test]
    fn lvlm_script() {
        let b = Backends::mock(fixtures());
        assert_eq!(b.generate(&[], "decouple this").unwrap(), "{\"ASR\": \"x\"}");
        let f = [frame(0, "a.png")];
        assert_eq!(b.generate(&f, "what price?").unwrap(), "B");
        assert_eq!(b.generate(&f, "other").unwrap(), "A");
        assert!(matches!(b.generate(&f, &"x".repeat(51)), Err(PortError::ContextOverflow(_))));
    }

    #[test]
    fn injected_faults() {
        let mut fx = fixtures();
        fx.fail.push(PortKind::Asr);
        fx.malformed = vec![PortKind::Ocr, PortKind::Detect, PortKind::EmbedText, PortKind::ClipScore];
        let b = Backends::mock(fx);
        assert!(matches!(b.asr(&AudioRef::file("talk.wav")), Err(PortError::BackendUnavailable { .. })));
        assert!(matches!(b.ocr(&[frame(3, "sale.png")]), Err(PortError::MalformedResponse { .. })));
        assert!(matches!(b.detect(&[frame(2, "street.png")], &["dog".into()]), Err(PortError::MalformedResponse { .. })));
        assert!(matches!(b.embed_text(&["a".into()]), Err(PortError::MalformedResponse { .. })));
        assert!(matches!(b.clip_scores(&[frame(2, "street.png")], &["dog".into()]), Err(PortError::MalformedResponse { .. })));
    }

    #[test]
    fn fixture_load() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(FIXTURE_FILE), serde_json::to_string(&fixtures()).unwrap()).unwrap();
        let back = MockFixtures::load(dir.path()).unwrap();
        assert_eq!(back, fixtures());
        assert_eq!(back.fingerprint(), fixtures().fingerprint());
    }
}
