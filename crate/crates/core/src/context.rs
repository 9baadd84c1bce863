//! Merges retrieved texts into one chronological auxiliary block, trims it to
//! an optional token budget and renders the final answer prompt.

use serde::{Deserialize, Serialize};

use crate::decouple::{render_options_block, Query};
use crate::record::AuxKind;
use crate::retrieval::RetrievedAux;
use crate::templates::TemplateSet;

/// Token budget of the `paper-default` preset.
pub const PAPER_DEFAULT_BUDGET: usize = 2048;

/// Accepts `paper-default` or a plain token count.
pub fn parse_budget(s: &str) -> Result<usize, String> {
    match s.trim() {
        "paper-default" => Ok(PAPER_DEFAULT_BUDGET),
        other => other.parse().map_err(|_| format!("budget must be a token count or `paper-default`, got {other:?}")),
    }
}

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// Counts alphanumeric runs and standalone punctuation marks as words and
/// charges 1.3 tokens per word, rounded up.
#[derive(Debug, Default, Clone, Copy)]
pub struct HeuristicEstimator;

impl HeuristicEstimator {
    pub fn word_count(text: &str) -> usize {
        let mut words = 0;
        let mut in_run = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_run {
                    words += 1;
                }
                in_run = true;
            } else {
                in_run = false;
                if !c.is_whitespace() {
                    words += 1;
                }
            }
        }
        words
    }
}

impl TokenEstimator for HeuristicEstimator {
    fn estimate(&self, text: &str) -> usize {
        (Self::word_count(text) as f64 * 1.3).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLayout {
    /// All kinds interleaved by time.
    #[default]
    Chronological,
    /// One block per kind (OCR, ASR, DET), each in time order.
    PerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub kind: AuxKind,
    pub t_start_s: f64,
    pub t_end_s: f64,
    /// Record id for OCR/ASR, frame index for DET.
    pub id: u64,
    pub text: String,
    pub score: f64,
}

impl Section {
    pub fn render(&self) -> String {
        let when = if self.t_end_s > self.t_start_s {
            format!("{}-{}", fmt_timestamp(self.t_start_s), fmt_timestamp(self.t_end_s))
        } else {
            fmt_timestamp(self.t_start_s)
        };
        format!("[{when}] {}: {}", self.kind.label(), self.text)
    }

    fn sort_key(&self) -> (f64, u8, u64) {
        (self.t_start_s, self.kind.priority(), self.id)
    }
}

/// `mm:ss`, or `h:mm:ss` past the hour; fractional seconds are truncated.
pub fn fmt_timestamp(seconds: f64) -> String {
    let total = seconds.max(0.0).floor() as u64;
    let (h, m, s) = (total / 3600, (total / 60) % 60, total % 60);
    if h > 0 {
        format!("{h}:{m:02}:{s:02}")
    } else {
        format!("{m:02}:{s:02}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSection {
    pub kind: AuxKind,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub sections: Vec<Section>,
    pub rendered: String,
    pub token_estimate: usize,
    pub dropped: Vec<DroppedSection>,
}

impl AssembledContext {
    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }
}

pub struct AssembleOptions<'a> {
    pub budget_tokens: Option<usize>,
    pub layout: ContextLayout,
    pub estimator: &'a dyn TokenEstimator,
}

impl Default for AssembleOptions<'_> {
    fn default() -> Self {
        Self { budget_tokens: None, layout: ContextLayout::Chronological, estimator: &HeuristicEstimator }
    }
}

fn sections_of(aux: &RetrievedAux) -> Vec<Section> {
    let mut out = Vec::new();
    for (kind, hits) in [(AuxKind::Ocr, &aux.ocr_hits), (AuxKind::Asr, &aux.asr_hits)] {
        out.extend(hits.iter().map(|h| Section {
            kind,
            t_start_s: h.record.t_start_s,
            t_end_s: h.record.t_end_s,
            id: h.record.id.0,
            text: h.record.text.trim().to_string(),
            score: h.score,
        }));
    }
    out.extend(aux.det.iter().filter(|d| !d.is_empty()).map(|d| Section {
        kind: AuxKind::Det,
        t_start_s: d.timestamp_s,
        t_end_s: d.timestamp_s,
        id: d.frame_index,
        text: d.texts().join("\n"),
        score: d.score,
    }));
    out
}

fn order(sections: &mut [Section], layout: ContextLayout) {
    let block = |k: AuxKind| match k {
        AuxKind::Ocr => 0,
        AuxKind::Asr => 1,
        AuxKind::Det => 2,
    };
    sections.sort_by(|a, b| {
        let (ta, pa, ia) = a.sort_key();
        let (tb, pb, ib) = b.sort_key();
        let by_time = ta.total_cmp(&tb).then(pa.cmp(&pb)).then(ia.cmp(&ib));
        match layout {
            ContextLayout::Chronological => by_time,
            ContextLayout::PerKind => block(a.kind).cmp(&block(b.kind)).then(by_time),
        }
    });
}

fn render_sections(sections: &[Section]) -> String {
    sections.iter().map(Section::render).collect::<Vec<_>>().join("\n")
}

/// Orders all retrieved texts and, when a budget is set, drops sections until
/// the estimate fits: one section per turn, cycling OCR, DET, ASR, each turn
/// removing that kind's lowest-scoring section. A lone remaining section is
/// always kept.
pub fn assemble(aux: &RetrievedAux, opts: &AssembleOptions<'_>) -> AssembledContext {
    let mut sections = sections_of(aux);
    order(&mut sections, opts.layout);
    let mut rendered = render_sections(&sections);
    let mut token_estimate = if rendered.is_empty() { 0 } else { opts.estimator.estimate(&rendered) };
    let mut dropped = Vec::new();

    if let Some(budget) = opts.budget_tokens {
        let cycle = [AuxKind::Ocr, AuxKind::Det, AuxKind::Asr];
        let mut turn = 0usize;
        while token_estimate > budget && sections.len() > 1 {
            let kind = (0..cycle.len())
                .map(|k| cycle[(turn + k) % cycle.len()])
                .find(|k| sections.iter().any(|s| s.kind == *k))
                .expect("at least one section remains");
            turn = cycle.iter().position(|k| *k == kind).unwrap() + 1;
            let victim = sections
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind == kind)
                .min_by(|(_, a), (_, b)| a.score.total_cmp(&b.score).then(b.id.cmp(&a.id)))
                .map(|(i, _)| i)
                .unwrap();
            let s = sections.remove(victim);
            dropped.push(DroppedSection { kind: s.kind, id: s.id });
            rendered = render_sections(&sections);
            token_estimate = opts.estimator.estimate(&rendered);
        }
    }

    AssembledContext { sections, rendered, token_estimate, dropped }
}

pub fn render_context_block(ctx: &AssembledContext) -> String {
    if ctx.rendered.is_empty() {
        String::new()
    } else {
        format!("Auxiliary texts extracted from the video, in chronological order:\n{}\n\n", ctx.rendered)
    }
}

/// Auxiliary block first, then the question, options and answer instruction.
pub fn render_answer_prompt(templates: &TemplateSet, ctx: &AssembledContext, q: &Query) -> (String, String) {
    let t = if q.is_multiple_choice() { &templates.answer_mc } else { &templates.answer_open };
    let block = render_context_block(ctx);
    let options = render_options_block(&q.options);
    let text = t.render(&[("context_block", &block), ("question", &q.question), ("options_block", &options)]);
    (t.id.clone(), text)
}
