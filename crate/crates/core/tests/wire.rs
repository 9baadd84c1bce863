//! Wire-protocol client against the bundled server, schema conformance of
//! every payload, and client behaviour against misbehaving servers.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};
use vidrag_core::ports::mock::MockFixtures;
use vidrag_core::ports::server::WireServer;
use vidrag_core::ports::wire;
use vidrag_core::ports::{AudioRef, Backends, ExtractorEndpoint, FrameRef, PortError, PortKind};

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo")
}

fn fixtures() -> MockFixtures {
    MockFixtures::load(&demo()).unwrap()
}

fn frames(names: &[u64]) -> Vec<FrameRef> {
    names
        .iter()
        .map(|i| FrameRef {
            frame_index: *i,
            timestamp_s: *i as f64 * 2.0,
            image_ref: demo().join(format!("video/f{i:03}.png")),
        })
        .collect()
}

fn endpoints(base: &str, retries: u32) -> Vec<ExtractorEndpoint> {
    PortKind::ALL
        .iter()
        .map(|k| ExtractorEndpoint { timeout_s: 5.0, max_retries: retries, ..ExtractorEndpoint::new(*k, base) })
        .collect()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_valid(name: &str, v: &Value) {
    let s = schema(name);
    let errors: Vec<String> = s.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name} rejected {v}: {errors:?}");
}

#[test]
fn http_client_matches_direct_backend() {
    let direct = Backends::mock(fixtures());
    let server = WireServer::new(Backends::mock(fixtures())).spawn("127.0.0.1:0").unwrap();
    let remote = Backends::http(&endpoints(&server.base_url(), 1)).unwrap();
    let fs = frames(&[3, 10, 20, 25]);
    let audio = AudioRef::file(demo().join("video/audio.wav"));
    let prompts = vec!["hat".to_string(), "dog".to_string()];

    assert_eq!(remote.ocr(&fs).unwrap(), direct.ocr(&fs).unwrap());
    assert_eq!(remote.asr(&audio).unwrap(), direct.asr(&audio).unwrap());
    assert_eq!(remote.detect(&fs, &prompts).unwrap(), direct.detect(&fs, &prompts).unwrap());
    let texts = vec!["hats cost".to_string(), "exit sign".to_string()];
    assert_eq!(remote.embed_text(&texts).unwrap(), direct.embed_text(&texts).unwrap());
    assert_eq!(remote.clip_scores(&fs, &prompts).unwrap(), direct.clip_scores(&fs, &prompts).unwrap());
    assert_eq!(remote.generate(&fs, "HATS 20 DOLLARS").unwrap(), "B");
    assert!(matches!(remote.asr(&AudioRef::none()), Err(PortError::NoAudioTrack)));
    for k in PortKind::ALL {
        assert!(remote.calls(k) >= 1, "{k} not counted");
    }

    let health: Value = reqwest::blocking::get(format!("{}{}", server.base_url(), wire::HEALTH_PATH)).unwrap().json().unwrap();
    assert_eq!(health["ready"], json!(true));
    assert!(health["model"].as_str().unwrap().starts_with("mock:"));
}

#[test]
fn remote_errors_cross_the_wire() {
    let mut f = fixtures();
    f.fail = vec![PortKind::Ocr];
    f.lvlm.max_prompt_chars = Some(10);
    let server = WireServer::new(Backends::mock(f)).spawn("127.0.0.1:0").unwrap();
    let remote = Backends::http(&endpoints(&server.base_url(), 2)).unwrap();
    assert!(matches!(remote.ocr(&frames(&[3])), Err(PortError::BackendUnavailable { kind: PortKind::Ocr, .. })));
    assert!(matches!(remote.generate(&frames(&[3]), "a prompt that is too long"), Err(PortError::ContextOverflow(_))));
}

/// Requests and responses for every kind, as the server sees and answers them.
fn exchanges() -> Vec<(PortKind, Value)> {
    let fs = wire::encode_frames(PortKind::Ocr, &frames(&[10, 25])).unwrap();
    let audio = wire::AsrRequest::encode(&AudioRef::file(demo().join("video/audio.wav"))).unwrap();
    vec![
        (PortKind::Ocr, serde_json::to_value(wire::OcrRequest { frames: fs.clone() }).unwrap()),
        (PortKind::Asr, serde_json::to_value(audio).unwrap()),
        (
            PortKind::Detect,
            serde_json::to_value(wire::DetectRequest { frames: fs.clone(), prompts: vec!["hat".into(), "dog".into()] }).unwrap(),
        ),
        (PortKind::EmbedText, serde_json::to_value(wire::EmbedRequest { texts: vec!["wool hats".into()] }).unwrap()),
        (
            PortKind::ClipScore,
            serde_json::to_value(wire::ClipRequest { frames: fs.clone(), prompts: vec!["A picture of hat".into()] }).unwrap(),
        ),
        (PortKind::LvlmGenerate, serde_json::to_value(wire::LvlmRequest { frames: fs, prompt: "HATS 20 DOLLARS".into() }).unwrap()),
    ]
}

#[test]
fn payloads_validate_against_shipped_schemas() {
    let server = WireServer::new(Backends::mock(fixtures()));
    for (kind, payload) in exchanges() {
        let request = json!({"kind": kind.as_str(), "payload": payload});
        assert_valid("envelope.request.json", &request);
        assert_valid(&format!("{}.request.json", kind.as_str()), &payload);
        let (status, env) = server.handle(&request.to_string());
        assert_eq!(status, 200, "{kind}");
        let env = serde_json::to_value(env).unwrap();
        assert_valid("envelope.response.json", &env);
        assert_valid(&format!("{}.result.json", kind.as_str()), &env["result"]);
    }
}

#[test]
fn error_envelopes_validate() {
    let server = WireServer::new(Backends::mock(fixtures()));
    let (status, env) = server.handle("{not json");
    assert_eq!(status, 400);
    assert_valid("envelope.response.json", &serde_json::to_value(&env).unwrap());
    let (status, env) = server.handle(&json!({"kind": "ocr", "payload": {"frames": "nope"}}).to_string());
    assert_eq!(status, 400);
    assert_eq!(env.error.unwrap().code, wire::CODE_BAD_REQUEST);

    let mut f = fixtures();
    f.fail = vec![PortKind::EmbedText];
    let failing = WireServer::new(Backends::mock(f));
    let (status, env) = failing.handle(&json!({"kind": "embed_text", "payload": {"texts": ["x"]}}).to_string());
    assert_eq!(status, 503);
    let v = serde_json::to_value(&env).unwrap();
    assert_valid("envelope.response.json", &v);
    assert_eq!(v["error"]["code"], json!(wire::CODE_UNAVAILABLE));
}

#[test]
fn schemas_reject_bad_payloads() {
    let bad_box = json!({"detections": [{"frame_index": 1, "category": "hat", "box": [1, 2, 3], "score": 0.5}]});
    assert!(!schema("detect.result.json").is_valid(&bad_box));
    let bad_conf = json!({"lines": [{"frame_index": 1, "text": "x", "confidence": 7.0}]});
    assert!(!schema("ocr.result.json").is_valid(&bad_conf));
    assert!(!schema("envelope.response.json").is_valid(&json!({"ok": true})));
    assert!(!schema("envelope.request.json").is_valid(&json!({"kind": "video", "payload": {}})));
}

/// A one-route HTTP server answering each connection with the next scripted
/// `(status, body)`; the last entry repeats.
fn scripted_server(script: Vec<(u16, &'static str)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, text) = script[n.min(script.len() - 1)];
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (format!("http://{addr}"), hits)
}

fn lvlm_only(base: &str, retries: u32) -> Backends {
    let mut eps = endpoints("http://127.0.0.1:9", 1);
    for e in &mut eps {
        if e.kind == PortKind::LvlmGenerate {
            e.base_url = base.to_string();
            e.max_retries = retries;
        }
    }
    Backends::http(&eps).unwrap()
}

#[test]
fn non_json_body_is_malformed() {
    let (base, hits) = scripted_server(vec![(200, "<html>oops</html>")]);
    let b = lvlm_only(&base, 3);
    assert!(matches!(b.generate(&[], "q"), Err(PortError::MalformedResponse { kind: PortKind::LvlmGenerate, .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1, "malformed replies are not retried");
}

#[test]
fn schema_violating_result_is_malformed() {
    let (base, _) = scripted_server(vec![(200, r#"{"ok": true, "result": {"txt": "B"}}"#)]);
    let b = lvlm_only(&base, 1);
    assert!(matches!(b.generate(&[], "q"), Err(PortError::MalformedResponse { .. })));
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let (base, hits) = scripted_server(vec![
        (503, r#"{"ok": false, "error": {"code": "unavailable", "message": "warming up"}}"#),
        (500, "internal"),
        (200, r#"{"ok": true, "result": {"text": "C"}}"#),
    ]);
    let b = lvlm_only(&base, 3);
    assert_eq!(b.generate(&[], "q").unwrap(), "C");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let (base, hits) = scripted_server(vec![(503, "busy")]);
    let b = lvlm_only(&base, 2);
    assert!(matches!(b.generate(&[], "q"), Err(PortError::BackendUnavailable { .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let b = lvlm_only(&base, 2);
    assert!(matches!(b.generate(&[], "q"), Err(PortError::BackendUnavailable { .. })));
}

#[test]
fn overflow_envelope_is_final() {
    let (base, hits) =
        scripted_server(vec![(200, r#"{"ok": false, "error": {"code": "context_overflow", "message": "too long"}}"#)]);
    let b = lvlm_only(&base, 3);
    assert!(matches!(b.generate(&[], "q"), Err(PortError::ContextOverflow(_))));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
