//! JSON envelope shared by every port kind.
//!
//! Request: `{"kind": "<kind>", "payload": {...}}`, POSTed to `/v1/extract`.
//! Response: `{"ok": true, "result": {...}}` or
//! `{"ok": false, "error": {"code": "...", "message": "..."}}`.
//! Images and audio travel base64-encoded inside the payload.

use std::fs;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AsrSegment, AudioRef, Detection, FrameRef, OcrLine, PortError, PortKind};

pub const EXTRACT_PATH: &str = "/v1/extract";
pub const HEALTH_PATH: &str = "/healthz";

pub const CODE_NO_AUDIO: &str = "no_audio_track";
pub const CODE_CONTEXT_OVERFLOW: &str = "context_overflow";
pub const CODE_BAD_REQUEST: &str = "bad_request";
pub const CODE_UNAVAILABLE: &str = "unavailable";
pub const CODE_MALFORMED: &str = "malformed";
pub const CODE_INTERNAL: &str = "internal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestEnvelope {
    pub kind: PortKind,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseEnvelope {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl ResponseEnvelope {
    pub fn success(result: Value) -> Self {
        Self { ok: true, result: Some(result), error: None }
    }

    pub fn failure(code: &str, message: impl Into<String>) -> Self {
        Self { ok: false, result: None, error: Some(WireError { code: code.into(), message: message.into() }) }
    }

    /// The result body on success, or the port error the envelope encodes.
    pub fn into_result(self, kind: PortKind) -> Result<Value, PortError> {
        match (self.ok, self.result, self.error) {
            (true, Some(r), None) => Ok(r),
            (false, None, Some(e)) => Err(error_from_wire(kind, e)),
            _ => Err(PortError::malformed(kind, "envelope must carry exactly one of result/error")),
        }
    }
}

pub fn error_from_wire(kind: PortKind, e: WireError) -> PortError {
    match e.code.as_str() {
        CODE_NO_AUDIO => PortError::NoAudioTrack,
        CODE_CONTEXT_OVERFLOW => PortError::ContextOverflow(e.message),
        CODE_UNAVAILABLE => PortError::BackendUnavailable { kind, message: e.message },
        _ => PortError::Remote { kind, code: e.code, message: e.message },
    }
}

pub fn error_to_wire(e: &PortError) -> WireError {
    let code = match e {
        PortError::NoAudioTrack => CODE_NO_AUDIO,
        PortError::ContextOverflow(_) => CODE_CONTEXT_OVERFLOW,
        PortError::BackendUnavailable { .. } => CODE_UNAVAILABLE,
        PortError::MalformedResponse { .. } => CODE_MALFORMED,
        PortError::InvalidRequest { .. } | PortError::DimensionMismatch { .. } => CODE_BAD_REQUEST,
        PortError::Remote { code, .. } => code.as_str(),
    };
    let message = match e {
        PortError::ContextOverflow(m) => m.clone(),
        other => other.to_string(),
    };
    WireError { code: code.to_string(), message }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireFrame {
    pub frame_index: u64,
    pub timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub image_png_b64: String,
}

impl WireFrame {
    pub fn encode(kind: PortKind, f: &FrameRef) -> Result<Self, PortError> {
        let bytes = fs::read(&f.image_ref).map_err(|e| PortError::InvalidRequest {
            kind,
            message: format!("reading {}: {e}", f.image_ref.display()),
        })?;
        Ok(Self {
            frame_index: f.frame_index,
            timestamp_s: f.timestamp_s,
            name: Some(f.key()),
            image_png_b64: B64.encode(bytes),
        })
    }

    /// Frame reference on the serving side. The image itself is not written
    /// anywhere; `image_ref` carries the sender's file name.
    pub fn to_frame_ref(&self) -> FrameRef {
        FrameRef {
            frame_index: self.frame_index,
            timestamp_s: self.timestamp_s,
            image_ref: self.name.clone().unwrap_or_else(|| format!("frame_{}", self.frame_index)).into(),
        }
    }

    pub fn image_bytes(&self) -> Result<Vec<u8>, base64::DecodeError> {
        B64.decode(&self.image_png_b64)
    }
}

pub fn encode_frames(kind: PortKind, frames: &[FrameRef]) -> Result<Vec<WireFrame>, PortError> {
    frames.iter().map(|f| WireFrame::encode(kind, f)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrRequest {
    pub frames: Vec<WireFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrResult {
    pub lines: Vec<OcrLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_name: Option<String>,
    pub audio_b64: String,
}

impl AsrRequest {
    pub fn encode(audio: &AudioRef) -> Result<Self, PortError> {
        let path = audio.path.as_ref().ok_or(PortError::NoAudioTrack)?;
        let bytes = fs::read(path).map_err(|e| PortError::InvalidRequest {
            kind: PortKind::Asr,
            message: format!("reading {}: {e}", path.display()),
        })?;
        Ok(Self { audio_name: Some(super::file_key(path)), audio_b64: B64.encode(bytes) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrResult {
    pub segments: Vec<AsrSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub frames: Vec<WireFrame>,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectResult {
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedResult {
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRequest {
    pub frames: Vec<WireFrame>,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipResult {
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvlmRequest {
    pub frames: Vec<WireFrame>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvlmResult {
    pub text: String,
}

/// Decodes a result body into its typed form; any schema violation is a
/// `MalformedResponse`.
pub fn decode_result<T: DeserializeOwned>(kind: PortKind, v: Value) -> Result<T, PortError> {
    serde_json::from_value(v).map_err(|e| PortError::malformed(kind, e.to_string()))
}
