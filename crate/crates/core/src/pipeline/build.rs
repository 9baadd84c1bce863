//! Per-video database directory:
//!
//! ```text
//! ocr/ asr/              flat index layout (manifest.json, vectors.f32, payloads.jsonl)
//! det/detections.jsonl   one FrameDetections per keyframe (eager builds only)
//! det/cache/<key>.json   keyframe selection and detections per entity set
//! keyframes.json         selection of the eager detection pass, `null` otherwise
//! frames.json            sampled frames
//! build_meta.json        parameters, fingerprints and warnings
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::database_builder::{
    build_asr_db, build_det_db, build_ocr_db, select_keyframes, BuildError, Built, KeyframeParams, KeyframeSelection,
};
use crate::decouple::to_clip_prompts;
use crate::ports::{AudioRef, Backends, FrameRef, PortKind};
use crate::scene_graph::FrameDetections;
use crate::vector_index::FlatIndex;

use super::video::{hex, VideoSource};
use super::{read_json, write_json, PipelineConfig, PipelineError};

const FORMAT_VERSION: u32 = 1;
pub const BUILD_META_FILE: &str = "build_meta.json";
pub const FRAMES_FILE: &str = "frames.json";
pub const KEYFRAMES_FILE: &str = "keyframes.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub format_version: u32,
    pub fingerprint: String,
    pub video: PathBuf,
    pub backend: String,
    pub endpoints: Vec<String>,
    pub frames_n: usize,
    pub t_retrieval: f64,
    pub t_keyframe: f64,
    pub beta: f64,
    pub base_frames: u32,
    pub asr_max_chars: usize,
    pub entities: Vec<String>,
    pub ocr_records: usize,
    pub asr_records: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesFile {
    pub frames: Vec<FrameRef>,
    pub audio: AudioRef,
}

/// Keyframes and detections for one entity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCacheEntry {
    pub entities: Vec<String>,
    pub clip_prompts: Vec<String>,
    pub keyframes: KeyframeSelection,
    pub frames: Vec<FrameDetections>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub db_dir: PathBuf,
    pub cache_hit: bool,
    pub meta: BuildMeta,
    pub port_calls: u64,
}

fn build_fingerprint(video_fp: &str, backends: &Backends, cfg: &PipelineConfig, entities: &[String]) -> String {
    let key = serde_json::json!({
        "format": FORMAT_VERSION,
        "video": video_fp,
        "backend": backends.fingerprint(),
        "frames_n": cfg.frames_n,
        "asr_max_chars": cfg.asr_max_chars,
        "entities": entities,
        "keyframes": if entities.is_empty() { None } else { Some(cfg.keyframe_params()) },
    });
    hex(&Sha256::digest(key.to_string().as_bytes()))
}

pub(crate) fn det_cache_key(entities: &[String], params: &KeyframeParams) -> String {
    let key = serde_json::json!({"entities": entities, "params": params});
    hex(&Sha256::digest(key.to_string().as_bytes())[..16])
}

fn det_cache_path(db_dir: &Path, key: &str) -> PathBuf {
    db_dir.join("det").join("cache").join(format!("{key}.json"))
}

fn existing_build(out: &Path, fingerprint: &str) -> Option<BuildMeta> {
    let meta: BuildMeta = read_json(&out.join(BUILD_META_FILE)).ok()?;
    let complete = [out.join(FRAMES_FILE), out.join("ocr").join("manifest.json"), out.join("asr").join("manifest.json")]
        .iter()
        .all(|p| p.is_file());
    (meta.fingerprint == fingerprint && complete).then_some(meta)
}

/// Keyframe selection and detection for one entity set.
pub(crate) fn detect_entities(
    frames: &[FrameRef],
    entities: &[String],
    backends: &Backends,
    params: &KeyframeParams,
) -> Result<DetCacheEntry, BuildError> {
    let clip_prompts = to_clip_prompts(entities);
    let keyframes = select_keyframes(frames, &clip_prompts, backends, params)?;
    let key_frames: Vec<FrameRef> = frames.iter().filter(|f| keyframes.selected.contains(&f.frame_index)).cloned().collect();
    let Built { value, warnings } = build_det_db(&key_frames, entities, backends)?;
    Ok(DetCacheEntry { entities: entities.to_vec(), clip_prompts, keyframes, frames: value, warnings })
}

fn or_empty(kind: PortKind, r: Result<Built<FlatIndex>, BuildError>, warnings: &mut Vec<String>) -> FlatIndex {
    match r {
        Ok(b) => {
            warnings.extend(b.warnings);
            b.value
        }
        Err(e) => {
            let msg = format!("{kind} path skipped: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            FlatIndex::new()
        }
    }
}

/// Samples frames, builds the OCR and ASR databases concurrently (plus the
/// detection database when `entities` is non-empty) and writes them to
/// `out`. An up-to-date database with the same fingerprint is reused without
/// any backend call.
pub fn run_build(
    video: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    backends: &Backends,
    entities: &[String],
) -> Result<BuildReport, PipelineError> {
    cfg.validate()?;
    let calls_before = backends.total_calls();
    let source = VideoSource::open(video)?;
    let frames = source.sample(cfg.frames_n);
    let fingerprint = build_fingerprint(&source.content_fingerprint(&frames)?, backends, cfg, entities);
    if let Some(meta) = existing_build(out, &fingerprint) {
        log::info!("database at {} is up to date", out.display());
        return Ok(BuildReport { db_dir: out.to_path_buf(), cache_hit: true, meta, port_calls: 0 });
    }

    let audio = source.audio_ref();
    let params = cfg.keyframe_params();
    let (ocr, asr, det) = std::thread::scope(|s| {
        let ocr = s.spawn(|| build_ocr_db(&frames, backends));
        let asr = s.spawn(|| build_asr_db(&audio, backends, cfg.asr_max_chars));
        let det = (!entities.is_empty()).then(|| s.spawn(|| detect_entities(&frames, entities, backends, &params)));
        (
            ocr.join().expect("OCR build thread panicked"),
            asr.join().expect("ASR build thread panicked"),
            det.map(|h| h.join().expect("DET build thread panicked")),
        )
    });

    let mut warnings = Vec::new();
    let ocr = or_empty(PortKind::Ocr, ocr, &mut warnings);
    let asr = or_empty(PortKind::Asr, asr, &mut warnings);
    let det = match det {
        Some(Ok(entry)) => {
            warnings.extend(entry.warnings.iter().cloned());
            Some(entry)
        }
        Some(Err(e)) => {
            let msg = format!("DET path skipped: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            None
        }
        None => None,
    };

    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let det_dir = out.join("det");
    if det_dir.exists() {
        fs::remove_dir_all(&det_dir).map_err(|e| PipelineError::io(&det_dir, e))?;
    }
    fs::create_dir_all(det_dir.join("cache")).map_err(|e| PipelineError::io(&det_dir, e))?;
    ocr.save(&out.join("ocr"))?;
    asr.save(&out.join("asr"))?;
    let mut lines = String::new();
    if let Some(entry) = &det {
        for f in &entry.frames {
            lines.push_str(&serde_json::to_string(f).expect("detections serialize"));
            lines.push('\n');
        }
        write_json(&det_cache_path(out, &det_cache_key(entities, &params)), entry)?;
    }
    let det_file = det_dir.join("detections.jsonl");
    fs::write(&det_file, lines).map_err(|e| PipelineError::io(&det_file, e))?;
    write_json(&out.join(KEYFRAMES_FILE), &det.as_ref().map(|d| &d.keyframes))?;
    write_json(&out.join(FRAMES_FILE), &FramesFile { frames, audio })?;

    let meta = BuildMeta {
        format_version: FORMAT_VERSION,
        fingerprint,
        video: source.root.clone(),
        backend: backends.fingerprint().to_string(),
        endpoints: cfg.endpoints.iter().map(|e| format!("{}={}", e.kind, e.base_url)).collect(),
        frames_n: cfg.frames_n,
        t_retrieval: cfg.t_retrieval,
        t_keyframe: cfg.t_keyframe,
        beta: cfg.beta,
        base_frames: cfg.base_frames,
        asr_max_chars: cfg.asr_max_chars,
        entities: entities.to_vec(),
        ocr_records: ocr.len(),
        asr_records: asr.len(),
        warnings,
    };
    // written last so an interrupted build never looks complete
    write_json(&out.join(BUILD_META_FILE), &meta)?;
    Ok(BuildReport { db_dir: out.to_path_buf(), cache_hit: false, meta, port_calls: backends.total_calls() - calls_before })
}

/// A built database opened for querying.
#[derive(Debug)]
pub struct Database {
    pub dir: PathBuf,
    pub meta: BuildMeta,
    pub frames: Vec<FrameRef>,
    pub audio: AudioRef,
    pub ocr: FlatIndex,
    pub asr: FlatIndex,
    /// Detection results computed during this process, by cache key.
    det_memo: std::sync::Mutex<BTreeMap<String, DetCacheEntry>>,
}

impl Database {
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let meta: BuildMeta = read_json(&dir.join(BUILD_META_FILE))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(PipelineError::Database {
                path: dir.to_path_buf(),
                message: format!("unsupported format version {}", meta.format_version),
            });
        }
        let frames: FramesFile = read_json(&dir.join(FRAMES_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            frames: frames.frames,
            audio: frames.audio,
            ocr: FlatIndex::load(&dir.join("ocr"))?,
            asr: FlatIndex::load(&dir.join("asr"))?,
            det_memo: Default::default(),
        })
    }

    /// Detection results for `entities`, from memory, the on-disk cache, or a
    /// fresh keyframe selection and detection pass (which is then cached).
    pub fn detections(
        &self,
        entities: &[String],
        params: &KeyframeParams,
        backends: &Backends,
    ) -> Result<DetCacheEntry, PipelineError> {
        let key = det_cache_key(entities, params);
        if let Some(e) = self.det_memo.lock().expect("det memo poisoned").get(&key) {
            return Ok(e.clone());
        }
        let path = det_cache_path(&self.dir, &key);
        let entry = match read_json::<DetCacheEntry>(&path) {
            Ok(e) if e.entities == entities => e,
            _ => {
                let e = detect_entities(&self.frames, entities, backends, params)?;
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|err| PipelineError::io(parent, err))?;
                }
                if let Err(err) = write_json(&path, &e) {
                    log::warn!("could not cache detections: {err}");
                }
                e
            }
        };
        self.det_memo.lock().expect("det memo poisoned").insert(key, entry.clone());
        Ok(entry)
    }
}
