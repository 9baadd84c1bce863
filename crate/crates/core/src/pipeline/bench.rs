use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decouple::Query;
use crate::ports::Backends;

use super::ask::{parse_prediction, run_ask, PhaseTimings, UNPARSED};
use super::video::hex;
use super::{run_build, write_json, Database, PipelineConfig, PipelineError, Resources};

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaItem {
    #[serde(default)]
    pub id: Option<String>,
    /// Frame directory of the video; relative paths resolve against the
    /// dataset file's directory.
    pub video: PathBuf,
    pub question: String,
    pub options: Vec<String>,
    /// Gold option letter, or the gold option's text.
    #[serde(alias = "answer")]
    pub gold: String,
    /// Duration bucket such as `short`, `medium` or `long`.
    #[serde(default)]
    pub duration: Option<String>,
}

impl QaItem {
    pub fn query(&self) -> Query {
        Query::new(self.question.clone()).with_options(self.options.iter().cloned())
    }

    /// The gold answer as an option letter.
    pub fn gold_letter(&self) -> String {
        let q = self.query();
        let g = self.gold.trim();
        let letters = q.option_letters();
        if g.chars().count() == 1 && letters.iter().any(|l| g.eq_ignore_ascii_case(&l.to_string())) {
            return g.to_ascii_uppercase();
        }
        match parse_prediction(g, &q) {
            p if p == UNPARSED => g.to_string(),
            p => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResult {
    pub index: usize,
    pub id: Option<String>,
    pub video: PathBuf,
    pub question: String,
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
    pub duration: Option<String>,
    pub aux_tokens: usize,
    pub timings: PhaseTimings,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl BucketStats {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub by_duration: BTreeMap<String, BucketStats>,
    pub failures: usize,
    #[serde(skip)]
    pub results: Vec<QaResult>,
}

impl BenchSummary {
    pub fn from_results(results: Vec<QaResult>) -> Self {
        let mut all = BucketStats::default();
        let mut by_duration: BTreeMap<String, BucketStats> = BTreeMap::new();
        for r in &results {
            all.add(r.correct);
            if let Some(d) = &r.duration {
                by_duration.entry(d.clone()).or_default().add(r.correct);
            }
        }
        Self {
            total: all.total,
            correct: all.correct,
            accuracy: all.accuracy,
            by_duration,
            failures: results.iter().filter(|r| r.error.is_some()).count(),
            results,
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::from("| split | items | correct | accuracy |\n|---|---|---|---|\n");
        let mut row = |name: &str, b: &BucketStats| {
            s.push_str(&format!("| {name} | {} | {} | {:.1}% |\n", b.total, b.correct, b.accuracy * 100.0));
        };
        row("overall", &BucketStats { total: self.total, correct: self.correct, accuracy: self.accuracy });
        for (k, b) in &self.by_duration {
            row(k, b);
        }
        s
    }
}

/// Reads a JSONL dataset; blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<QaItem>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut item: QaItem =
            serde_json::from_str(line).map_err(|e| PipelineError::Dataset { line: i + 1, message: e.to_string() })?;
        if item.video.is_relative() {
            item.video = base.join(&item.video);
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(items)
}

fn db_dir_for(out: &Path, video: &Path) -> PathBuf {
    let stem = video.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "video".into());
    let tag = hex(&Sha256::digest(video.as_os_str().as_encoded_bytes())[..4]);
    out.join("dbs").join(format!("{stem}-{tag}"))
}

/// A scored item plus the error that forced it to unparsed, if any.
type ItemOutcome = (QaResult, Option<String>);

/// Builds (or reuses) one database per distinct video, answers every item on
/// a pool of `cfg.workers` threads and writes `results.jsonl`,
/// `audits.jsonl`, `summary.json` and `summary.md` into `out`. A failing item
/// is scored as unparsed and the run continues.
pub fn run_bench(
    items: &[QaItem],
    cfg: &PipelineConfig,
    res: &Resources,
    backends: &Backends,
    out: &Path,
) -> Result<BenchSummary, PipelineError> {
    if items.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;

    let mut dbs: BTreeMap<&Path, Result<Database, String>> = BTreeMap::new();
    for item in items {
        dbs.entry(item.video.as_path()).or_insert_with(|| {
            let dir = db_dir_for(out, &item.video);
            run_build(&item.video, &dir, cfg, backends, &[]).and_then(|_| Database::open(&dir)).map_err(|e| {
                log::warn!("build failed for {}: {e}", item.video.display());
                e.to_string()
            })
        });
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ItemOutcome>>> = Mutex::new(vec![None; items.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let done = answer_item(i, item, &dbs[item.video.as_path()], cfg, res, backends);
                slots.lock().expect("result slots poisoned")[i] = Some(done);
            });
        }
    });

    let (results, audits): (Vec<QaResult>, Vec<Option<String>>) =
        slots.into_inner().expect("result slots poisoned").into_iter().map(|s| s.expect("every item answered")).unzip();
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r).expect("result serializes"));
        lines.push('\n');
    }
    let path = out.join("results.jsonl");
    fs::write(&path, lines).map_err(|e| PipelineError::io(&path, e))?;
    let audit_lines: String = audits.into_iter().flatten().map(|a| a + "\n").collect();
    let path = out.join("audits.jsonl");
    fs::write(&path, audit_lines).map_err(|e| PipelineError::io(&path, e))?;

    let summary = BenchSummary::from_results(results);
    write_json(&out.join("summary.json"), &summary)?;
    let path = out.join("summary.md");
    fs::write(&path, summary.table()).map_err(|e| PipelineError::io(&path, e))?;
    Ok(summary)
}

fn answer_item(
    index: usize,
    item: &QaItem,
    db: &Result<Database, String>,
    cfg: &PipelineConfig,
    res: &Resources,
    backends: &Backends,
) -> (QaResult, Option<String>) {
    let gold = item.gold_letter();
    let outcome = db.as_ref().map_err(Clone::clone).and_then(|db| run_ask(db, &item.query(), cfg, res, backends).map_err(|e| e.to_string()));
    let (predicted, aux_tokens, timings, error, audit) = match outcome {
        Ok(o) => (o.audit.predicted.clone(), o.audit.aux_tokens, o.timings, None, Some(o.audit.to_json_line())),
        Err(e) => (UNPARSED.to_string(), 0, PhaseTimings::default(), Some(e), None),
    };
    let result = QaResult {
        index,
        id: item.id.clone(),
        video: item.video.clone(),
        question: item.question.clone(),
        correct: predicted == gold,
        gold,
        predicted,
        duration: item.duration.clone(),
        aux_tokens,
        timings,
        error,
    };
    (result, audit)
}
