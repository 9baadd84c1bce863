//! Serves a [`Backends`] bundle over the wire protocol. Used by
//! `vidrag serve-mock` and by the client conformance tests.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::wire::{self, ResponseEnvelope};
use super::{AudioRef, Backends, PortError, PortKind};

pub struct WireServer {
    backends: Backends,
}

fn parse_payload<T: DeserializeOwned>(v: Value) -> Result<T, (u16, ResponseEnvelope)> {
    serde_json::from_value(v).map_err(|e| (400, ResponseEnvelope::failure(wire::CODE_BAD_REQUEST, e.to_string())))
}

fn respond<T: Serialize>(r: Result<T, PortError>) -> (u16, ResponseEnvelope) {
    match r {
        Ok(v) => (200, ResponseEnvelope::success(serde_json::to_value(v).expect("result serializes"))),
        Err(e) => {
            let status = match e {
                PortError::BackendUnavailable { .. } => 503,
                PortError::InvalidRequest { .. } | PortError::DimensionMismatch { .. } => 400,
                _ => 200,
            };
            let w = wire::error_to_wire(&e);
            (status, ResponseEnvelope { ok: false, result: None, error: Some(w) })
        }
    }
}

impl WireServer {
    pub fn new(backends: Backends) -> Self {
        Self { backends }
    }

    /// Handles one `/v1/extract` body, returning the HTTP status and envelope.
    pub fn handle(&self, body: &str) -> (u16, ResponseEnvelope) {
        let env: wire::RequestEnvelope = match serde_json::from_str(body) {
            Ok(e) => e,
            Err(e) => return (400, ResponseEnvelope::failure(wire::CODE_BAD_REQUEST, e.to_string())),
        };
        match self.dispatch(env) {
            Ok(r) | Err(r) => r,
        }
    }

    fn dispatch(&self, env: wire::RequestEnvelope) -> Result<(u16, ResponseEnvelope), (u16, ResponseEnvelope)> {
        let b = &self.backends;
        let frames = |fs: &[wire::WireFrame]| fs.iter().map(|f| f.to_frame_ref()).collect::<Vec<_>>();
        Ok(match env.kind {
            PortKind::Ocr => {
                let r: wire::OcrRequest = parse_payload(env.payload)?;
                respond(b.ocr(&frames(&r.frames)).map(|lines| wire::OcrResult { lines }))
            }
            PortKind::Asr => {
                let r: wire::AsrRequest = parse_payload(env.payload)?;
                let audio = AudioRef::file(r.audio_name.unwrap_or_else(|| "audio".into()));
                respond(b.asr(&audio).map(|segments| wire::AsrResult { segments }))
            }
            PortKind::Detect => {
                let r: wire::DetectRequest = parse_payload(env.payload)?;
                respond(b.detect(&frames(&r.frames), &r.prompts).map(|detections| wire::DetectResult { detections }))
            }
            PortKind::EmbedText => {
                let r: wire::EmbedRequest = parse_payload(env.payload)?;
                respond(b.embed_text(&r.texts).map(|v| wire::EmbedResult {
                    embeddings: v.into_iter().map(Into::into).collect(),
                }))
            }
            PortKind::ClipScore => {
                let r: wire::ClipRequest = parse_payload(env.payload)?;
                respond(b.clip_scores(&frames(&r.frames), &r.prompts).map(|scores| wire::ClipResult { scores }))
            }
            PortKind::LvlmGenerate => {
                let r: wire::LvlmRequest = parse_payload(env.payload)?;
                respond(b.generate(&frames(&r.frames), &r.prompt).map(|text| wire::LvlmResult { text }))
            }
        })
    }

    pub fn health(&self) -> Value {
        json!({"model": self.backends.fingerprint(), "ready": true})
    }

    /// Binds `addr` and serves on a background thread until the handle drops.
    pub fn spawn(self, addr: &str) -> std::io::Result<ServerHandle> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let worker = server.clone();
        let join = std::thread::spawn(move || {
            for req in worker.incoming_requests() {
                self.serve_one(req);
            }
        });
        Ok(ServerHandle { addr: local, server, join: Some(join) })
    }

    fn serve_one(&self, mut req: tiny_http::Request) {
        let (status, body) = match (req.method(), req.url()) {
            (tiny_http::Method::Post, wire::EXTRACT_PATH) => {
                let mut body = String::new();
                match req.as_reader().read_to_string(&mut body) {
                    Ok(_) => {
                        let (s, env) = self.handle(&body);
                        (s, serde_json::to_string(&env).expect("envelope serializes"))
                    }
                    Err(e) => (400, serde_json::to_string(&ResponseEnvelope::failure(wire::CODE_BAD_REQUEST, e.to_string())).unwrap()),
                }
            }
            (tiny_http::Method::Get, wire::HEALTH_PATH) => (200, self.health().to_string()),
            _ => (404, serde_json::to_string(&ResponseEnvelope::failure(wire::CODE_BAD_REQUEST, "unknown route")).unwrap()),
        };
        let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
        let resp = tiny_http::Response::from_string(body).with_status_code(status).with_header(header);
        if let Err(e) = req.respond(resp) {
            log::warn!("failed to send response: {e}");
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}
