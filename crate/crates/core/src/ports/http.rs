//! Blocking HTTP client for the wire protocol.

use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::wire::{self, ResponseEnvelope};
use super::{
    AsrPort, AsrSegment, AudioRef, ClipPort, Detection, DetectPort, EmbedPort, ExtractorEndpoint, FrameRef,
    LvlmPort, OcrLine, OcrPort, PortError, PortKind,
};

const BACKOFF_BASE_MS: u64 = 100;

#[derive(Debug)]
pub struct HttpPort {
    endpoint: ExtractorEndpoint,
    url: String,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Done(Result<Value, PortError>),
}

impl HttpPort {
    pub fn new(endpoint: ExtractorEndpoint) -> Result<Self, PortError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_s.max(0.001)))
            .build()
            .map_err(|e| PortError::unavailable(endpoint.kind, e.to_string()))?;
        let url = format!("{}{}", endpoint.base_url.trim_end_matches('/'), wire::EXTRACT_PATH);
        Ok(Self { endpoint, url, client })
    }

    pub fn endpoint(&self) -> &ExtractorEndpoint {
        &self.endpoint
    }

    /// Posts one envelope, retrying transport failures and 5xx replies with
    /// exponential backoff. `max_retries` counts total attempts.
    pub fn call<P: Serialize>(&self, kind: PortKind, payload: &P) -> Result<Value, PortError> {
        let body = wire::RequestEnvelope {
            kind,
            payload: serde_json::to_value(payload).map_err(|e| PortError::InvalidRequest {
                kind,
                message: e.to_string(),
            })?,
        };
        let attempts = self.endpoint.max_retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1).min(6)));
            }
            match self.attempt(kind, &body) {
                Attempt::Done(r) => return r,
                Attempt::Retry(msg) => {
                    log::warn!("{kind} request to {} failed (attempt {}/{attempts}): {msg}", self.url, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(PortError::unavailable(kind, format!("{} after {attempts} attempts: {last}", self.url)))
    }

    fn attempt(&self, kind: PortKind, body: &wire::RequestEnvelope) -> Attempt {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(token) = &self.endpoint.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let envelope: Result<ResponseEnvelope, _> = serde_json::from_str(&text);
        if status.is_server_error() {
            // an explicit unavailable/overflow envelope is final; anything else is retried
            if let Ok(env) = &envelope {
                if let Some(e) = &env.error {
                    if e.code != wire::CODE_UNAVAILABLE && e.code != wire::CODE_INTERNAL {
                        return Attempt::Done(Err(wire::error_from_wire(kind, e.clone())));
                    }
                }
            }
            return Attempt::Retry(format!("HTTP {status}"));
        }
        match envelope {
            Ok(env) => Attempt::Done(env.into_result(kind)),
            Err(e) if status.is_success() => Attempt::Done(Err(PortError::malformed(kind, format!("not an envelope: {e}")))),
            Err(_) => Attempt::Done(Err(PortError::Remote {
                kind,
                code: format!("http_{}", status.as_u16()),
                message: text.chars().take(200).collect(),
            })),
        }
    }
}

impl OcrPort for HttpPort {
    fn ocr(&self, frames: &[FrameRef]) -> Result<Vec<OcrLine>, PortError> {
        let kind = PortKind::Ocr;
        let req = wire::OcrRequest { frames: wire::encode_frames(kind, frames)? };
        Ok(wire::decode_result::<wire::OcrResult>(kind, self.call(kind, &req)?)?.lines)
    }
}

impl AsrPort for HttpPort {
    fn asr(&self, audio: &AudioRef) -> Result<Vec<AsrSegment>, PortError> {
        let kind = PortKind::Asr;
        let req = wire::AsrRequest::encode(audio)?;
        Ok(wire::decode_result::<wire::AsrResult>(kind, self.call(kind, &req)?)?.segments)
    }
}

impl DetectPort for HttpPort {
    fn detect(&self, frames: &[FrameRef], entity_prompts: &[String]) -> Result<Vec<Detection>, PortError> {
        let kind = PortKind::Detect;
        let req = wire::DetectRequest { frames: wire::encode_frames(kind, frames)?, prompts: entity_prompts.to_vec() };
        Ok(wire::decode_result::<wire::DetectResult>(kind, self.call(kind, &req)?)?.detections)
    }
}

impl EmbedPort for HttpPort {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, PortError> {
        let kind = PortKind::EmbedText;
        let req = wire::EmbedRequest { texts: texts.to_vec() };
        Ok(wire::decode_result::<wire::EmbedResult>(kind, self.call(kind, &req)?)?.embeddings)
    }
}

impl ClipPort for HttpPort {
    fn clip_scores(&self, frames: &[FrameRef], prompts: &[String]) -> Result<Vec<Vec<f64>>, PortError> {
        let kind = PortKind::ClipScore;
        let req = wire::ClipRequest { frames: wire::encode_frames(kind, frames)?, prompts: prompts.to_vec() };
        Ok(wire::decode_result::<wire::ClipResult>(kind, self.call(kind, &req)?)?.scores)
    }
}

impl LvlmPort for HttpPort {
    fn generate(&self, frames: &[FrameRef], prompt: &str) -> Result<String, PortError> {
        let kind = PortKind::LvlmGenerate;
        let req = wire::LvlmRequest { frames: wire::encode_frames(kind, frames)?, prompt: prompt.to_string() };
        Ok(wire::decode_result::<wire::LvlmResult>(kind, self.call(kind, &req)?)?.text)
    }
}
