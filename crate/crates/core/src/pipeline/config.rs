use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{ContextLayout, PAPER_DEFAULT_BUDGET};
use crate::database_builder::KeyframeParams;
use crate::ports::{ExtractorEndpoint, PortKind};
use crate::retrieval::RequestEncoding;

use super::PipelineError;

/// Every tunable of a build/ask/bench run. Loaded from a TOML document whose
/// keys mirror the field names; missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames sampled per video, for extraction and for the answer call.
    pub frames_n: usize,
    pub t_retrieval: f64,
    pub t_keyframe: f64,
    pub beta: f64,
    pub base_frames: u32,
    pub asr_max_chars: usize,
    pub budget_tokens: Option<usize>,
    /// Keep at most this many best hits per text kind before assembly.
    pub max_hits_per_kind: Option<usize>,
    pub enable_ocr: bool,
    pub enable_asr: bool,
    pub enable_det: bool,
    pub request_encoding: RequestEncoding,
    pub layout: ContextLayout,
    /// Directory whose prompt files replace the built-in templates.
    pub templates_dir: Option<PathBuf>,
    /// Replacement for the built-in abstract-term lexicon of the entity filter.
    pub abstract_terms: Option<PathBuf>,
    pub workers: usize,
    pub endpoints: Vec<ExtractorEndpoint>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frames_n: 32,
            t_retrieval: 0.3,
            t_keyframe: 0.3,
            beta: 4.0,
            base_frames: 16,
            asr_max_chars: 256,
            budget_tokens: None,
            max_hits_per_kind: None,
            enable_ocr: true,
            enable_asr: true,
            enable_det: true,
            request_encoding: RequestEncoding::Concat,
            layout: ContextLayout::Chronological,
            templates_dir: None,
            abstract_terms: None,
            workers: 1,
            endpoints: Vec::new(),
        }
    }
}

impl PipelineConfig {
    /// The defaults with the 2048-token budget preset.
    pub fn paper_default() -> Self {
        Self { budget_tokens: Some(PAPER_DEFAULT_BUDGET), ..Self::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies `VIDRAG_*_URL` variables, each replacing or adding the endpoint
    /// of its kind.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        for kind in PortKind::ALL {
            let Some(url) = get(kind.env_var()).filter(|u| !u.trim().is_empty()) else { continue };
            match self.endpoints.iter_mut().find(|e| e.kind == kind) {
                Some(e) => e.base_url = url,
                None => self.endpoints.push(ExtractorEndpoint::new(kind, url)),
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, t) in [("t_retrieval", self.t_retrieval), ("t_keyframe", self.t_keyframe)] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} must be in [0, 1], got {t}"));
            }
        }
        if self.frames_n == 0 {
            return bad("frames_n must be at least 1".into());
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.base_frames == 0 {
            return bad("base_frames must be at least 1".into());
        }
        if self.asr_max_chars == 0 {
            return bad("asr_max_chars must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn keyframe_params(&self) -> KeyframeParams {
        KeyframeParams { threshold: self.t_keyframe, beta: self.beta, base_frames: self.base_frames }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_toml() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.frames_n, 32);
        let cfg = PipelineConfig::from_toml_str(
            r#"
            frames_n = 8
            t_retrieval = 0.5
            budget_tokens = 2048
            layout = "per_kind"
            [[endpoints]]
            kind = "ocr"
            base_url = "http://127.0.0.1:9001"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.frames_n, 8);
        assert_eq!(cfg.budget_tokens, Some(2048));
        assert_eq!(cfg.layout, ContextLayout::PerKind);
        assert_eq!(cfg.endpoints[0].max_retries, 3);
        assert!(PipelineConfig::from_toml_str("t_retrieval = 1.5").is_err());
        assert!(PipelineConfig::from_toml_str("frames_n = 0").is_err());
        assert!(PipelineConfig::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = PipelineConfig::default();
        cfg.endpoints.push(ExtractorEndpoint::new(PortKind::Ocr, "http://old"));
        cfg.apply_env_from(|k| match k {
            "VIDRAG_OCR_URL" => Some("http://new".into()),
            "VIDRAG_LVLM_URL" => Some("http://lvlm".into()),
            _ => None,
        });
        assert_eq!(cfg.endpoints.len(), 2);
        assert_eq!(cfg.endpoints[0].base_url, "http://new");
        assert_eq!(cfg.endpoints[1].kind, PortKind::LvlmGenerate);
    }
}
