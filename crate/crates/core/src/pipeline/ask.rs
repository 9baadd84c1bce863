use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::context::{assemble, render_answer_prompt, AssembleOptions, AssembledContext, HeuristicEstimator};
use crate::database_builder::KeyframeSelection;
use crate::decouple::{parse_requests, render_decouple_prompt, DetType, Query, RetrievalRequestSet};
use crate::ports::{Backends, PortError};
use crate::retrieval::{encode_request, ocr_request_text, retrieve_text, select_det, RetrievedAux, ScoredRecord};
use crate::scene_graph::{build_summaries, SceneGraphConfig};
use crate::vector_index::FlatIndex;

use super::{Database, PipelineConfig, PipelineError, Resources};

/// Predicted option for replies that name no option.
pub const UNPARSED: &str = "unparsed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupleAudit {
    pub template_id: String,
    pub prompt: String,
    pub raw_reply: Option<String>,
    pub requests: serde_json::Value,
    /// Why the question fell back to query-only retrieval, if it did.
    pub degraded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetAudit {
    pub entities: Vec<String>,
    pub clip_prompts: Vec<String>,
    pub det_types: Vec<String>,
    pub keyframes: KeyframeSelection,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitAudit {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedIds {
    pub ocr: Vec<HitAudit>,
    pub asr: Vec<HitAudit>,
    pub det_frames: Vec<u64>,
}

/// Everything that determined one answer. Contains no timings, so identical
/// inputs give byte-identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub video: PathBuf,
    pub db_fingerprint: String,
    pub query: Query,
    pub decouple: DecoupleAudit,
    pub det: Option<DetAudit>,
    pub retrieved: RetrievedIds,
    pub context: AssembledContext,
    pub aux_tokens: usize,
    pub budget_tokens: Option<usize>,
    pub overflow_retry: bool,
    pub answer_template_id: String,
    pub answer_prompt: String,
    pub raw_output: String,
    pub predicted: String,
    pub warnings: Vec<String>,
}

impl AuditRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("audit serializes")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub decouple_ms: f64,
    pub det_ms: f64,
    pub retrieval_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct AskOutcome {
    pub audit: AuditRecord,
    pub timings: PhaseTimings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

fn option_body(option: &str) -> &str {
    let s = option.trim_start();
    let s = s.strip_prefix('(').unwrap_or(s);
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), Some('.' | ')' | ':')) if c.is_ascii_uppercase() => chars.as_str().trim(),
        _ => option.trim(),
    }
}

/// Option letter named by a model reply, or [`UNPARSED`]. Open questions
/// return the trimmed reply.
///
/// Accepted forms: a bare letter, a reply opening with `B.`/`B)`/`(B)`/`B:`,
/// "answer is B" / "Answer: B", or the verbatim text of exactly one option.
pub fn parse_prediction(raw: &str, q: &Query) -> String {
    if !q.is_multiple_choice() {
        return raw.trim().to_string();
    }
    let letters = q.option_letters();
    let is_letter = |t: &str| {
        let mut cs = t.chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) if letters.contains(&c) => Some(c),
            _ => None,
        }
    };
    let trimmed = raw.trim();
    let tokens: Vec<&str> = trimmed.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();

    if tokens.len() == 1 {
        if let Some(c) = is_letter(&tokens[0].to_ascii_uppercase()) {
            return c.to_string();
        }
    }
    let opener = trimmed.strip_prefix('(').unwrap_or(trimmed);
    let mut cs = opener.chars();
    if let (Some(c), Some('.' | ')' | ':')) = (cs.next(), cs.next()) {
        if letters.contains(&c) {
            return c.to_string();
        }
    }
    for (i, t) in tokens.iter().enumerate() {
        if t.eq_ignore_ascii_case("answer") {
            let found = tokens[i + 1..]
                .iter()
                .take(4)
                .filter(|t| !matches!(t.to_ascii_lowercase().as_str(), "is" | "the" | "option" | "correct"))
                .find_map(|t| is_letter(t));
            if let Some(c) = found {
                return c.to_string();
            }
        }
    }
    let lower = trimmed.to_lowercase();
    let matches: Vec<char> = q
        .options
        .iter()
        .zip(&letters)
        .filter(|(o, _)| {
            let body = option_body(o).to_lowercase();
            !body.is_empty() && lower.contains(&body)
        })
        .map(|(_, l)| *l)
        .collect();
    if let [only] = matches[..] {
        return only.to_string();
    }
    UNPARSED.to_string()
}

fn hits_audit(hits: &[ScoredRecord]) -> Vec<HitAudit> {
    hits.iter().map(|h| HitAudit { id: h.record.id.0, score: h.score }).collect()
}

#[allow(clippy::too_many_arguments)]
fn retrieve_path(
    enabled: bool,
    label: &str,
    db: &FlatIndex,
    request: Option<&str>,
    q: &Query,
    cfg: &PipelineConfig,
    backends: &Backends,
    warnings: &mut Vec<String>,
) -> Vec<ScoredRecord> {
    if !enabled || db.is_empty() {
        return Vec::new();
    }
    let result = encode_request(request, q, backends, cfg.request_encoding)
        .and_then(|v| retrieve_text(db, &v, cfg.t_retrieval, cfg.max_hits_per_kind));
    match result {
        Ok(h) => h,
        Err(e) => {
            let msg = format!("{label} retrieval skipped: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            Vec::new()
        }
    }
}

/// Answers one question against a built database: decouple the question,
/// run keyframe selection and detection when it names entities, retrieve
/// OCR/ASR records, assemble the context and query the LVLM.
pub fn run_ask(
    db: &Database,
    q: &Query,
    cfg: &PipelineConfig,
    res: &Resources,
    backends: &Backends,
) -> Result<AskOutcome, PipelineError> {
    cfg.validate()?;
    q.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let started = Instant::now();
    let mut timings = PhaseTimings::default();
    let mut warnings = Vec::new();

    let t = Instant::now();
    let prompt = render_decouple_prompt(&res.templates, q);
    let (raw_reply, requests, degraded) = match backends.generate(&[], &prompt.rendered) {
        Ok(raw) => match parse_requests(&raw, &res.entity_filter) {
            Ok(r) => (Some(raw), r, None),
            Err(e) => (Some(raw), RetrievalRequestSet::default(), Some(e.to_string())),
        },
        Err(e) => (None, RetrievalRequestSet::default(), Some(e.to_string())),
    };
    if let Some(d) = &degraded {
        let msg = format!("query decoupling failed, retrieving with the question only: {d}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    timings.decouple_ms = ms(t);

    let t = Instant::now();
    let mut det_audit = None;
    let mut det = Vec::new();
    if cfg.enable_det && !requests.det_entities.is_empty() && !requests.det_types.is_empty() {
        match db.detections(&requests.det_entities, &cfg.keyframe_params(), backends) {
            Ok(entry) => {
                warnings.extend(entry.warnings.iter().cloned());
                let summaries = build_summaries(&entry.frames, &SceneGraphConfig::default());
                det = select_det(&summaries, &requests.det_types);
                let ks = &entry.keyframes;
                for d in &mut det {
                    d.score = db
                        .frames
                        .iter()
                        .position(|f| f.frame_index == d.frame_index)
                        .and_then(|i| ks.normalized_scores.get(i).copied())
                        .unwrap_or(0.0);
                }
                det_audit = Some(DetAudit {
                    entities: entry.entities.clone(),
                    clip_prompts: entry.clip_prompts.clone(),
                    det_types: requests.det_types.iter().map(|t| DetType::as_str(*t).to_string()).collect(),
                    keyframes: entry.keyframes.clone(),
                    detections: entry.frames.iter().map(|f| f.detections.len()).sum(),
                });
            }
            Err(e) => {
                let msg = format!("DET path skipped: {e}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    timings.det_ms = ms(t);

    let t = Instant::now();
    let ocr_hits = retrieve_path(cfg.enable_ocr, "OCR", &db.ocr, ocr_request_text(&requests), q, cfg, backends, &mut warnings);
    let asr_hits =
        retrieve_path(cfg.enable_asr, "ASR", &db.asr, requests.asr_request.as_deref(), q, cfg, backends, &mut warnings);
    let aux = RetrievedAux { ocr_hits, asr_hits, det };
    timings.retrieval_ms = ms(t);

    let t = Instant::now();
    let mut budget = cfg.budget_tokens;
    let estimator = HeuristicEstimator;
    let build_ctx = |budget: Option<usize>| {
        assemble(&aux, &AssembleOptions { budget_tokens: budget, layout: cfg.layout, estimator: &estimator })
    };
    let mut ctx = build_ctx(budget);
    let (mut answer_template_id, mut answer_prompt) = render_answer_prompt(&res.templates, &ctx, q);
    let mut overflow_retry = false;
    let raw_output = match backends.generate(&db.frames, &answer_prompt) {
        Err(PortError::ContextOverflow(msg)) => {
            let halved = budget.unwrap_or(ctx.token_estimate) / 2;
            let note = format!("context overflow ({msg}), retrying with a {halved}-token budget");
            log::warn!("{note}");
            warnings.push(note);
            overflow_retry = true;
            budget = Some(halved);
            ctx = build_ctx(budget);
            (answer_template_id, answer_prompt) = render_answer_prompt(&res.templates, &ctx, q);
            backends.generate(&db.frames, &answer_prompt)?
        }
        other => other?,
    };
    timings.generate_ms = ms(t);
    timings.total_ms = ms(started);

    let audit = AuditRecord {
        video: db.meta.video.clone(),
        db_fingerprint: db.meta.fingerprint.clone(),
        query: q.clone(),
        decouple: DecoupleAudit {
            template_id: prompt.template_id,
            prompt: prompt.rendered,
            raw_reply,
            requests: requests.to_json(),
            degraded,
        },
        det: det_audit,
        retrieved: RetrievedIds {
            ocr: hits_audit(&aux.ocr_hits),
            asr: hits_audit(&aux.asr_hits),
            det_frames: aux.det.iter().map(|d| d.frame_index).collect(),
        },
        aux_tokens: ctx.token_estimate,
        context: ctx,
        budget_tokens: budget,
        overflow_retry,
        answer_template_id,
        answer_prompt,
        predicted: parse_prediction(&raw_output, q),
        raw_output,
        warnings,
    };
    Ok(AskOutcome { audit, timings })
}
