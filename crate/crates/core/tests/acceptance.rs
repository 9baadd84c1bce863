//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runs entirely on mock backends.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use vidrag_core::context::{assemble, AssembleOptions, PAPER_DEFAULT_BUDGET};
use vidrag_core::database_builder::{keyframes_from_scores, KeyframeParams};
use vidrag_core::decouple::Query;
use vidrag_core::pipeline::{run_ask, run_build, Database, PipelineConfig, Resources};
use vidrag_core::ports::{BBox, Backends, Detection};
use vidrag_core::retrieval::{retrieve_text, DetSelection, RetrievedAux, ScoredRecord};
use vidrag_core::scene_graph::{build_summary, relation, SceneGraphConfig};
use vidrag_core::{AuxKind, AuxRecord, EmbeddingVector, FlatIndex, IndexEntry, RecordId};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn unit(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn index_of(vectors: &[Vec<f32>]) -> FlatIndex {
    let mut idx = FlatIndex::new();
    idx.add(
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                vector: EmbeddingVector::new(v.clone()).unwrap(),
                record: AuxRecord::frame(RecordId(i as u64), AuxKind::Ocr, i as u64, i as f64, format!("record {i} text")),
            })
            .collect(),
    )
    .unwrap();
    idx
}

fn index_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let vectors: Vec<Vec<f32>> = (0..1000).map(|_| unit(&mut rng, 64)).collect();
    let idx = index_of(&vectors);
    let mut checked = 0;
    for _ in 0..50 {
        let q = unit(&mut rng, 64);
        let qv = EmbeddingVector::new(q.clone()).unwrap();
        let qn = q.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        for t in [0.0, 0.3, 0.5] {
            // brute force: exact cosine of the raw inputs in f64
            let mut want: Vec<(u64, f64)> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let vn = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
                    let dot: f64 = v.iter().zip(&q).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                    (i as u64, dot / (vn * qn))
                })
                .filter(|(_, s)| *s > t)
                .collect();
            want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            #[cfg_attr(not(feature = "parallel"), allow(unused_mut))]
            let mut variants = vec![("search", idx.search(&qv, t).unwrap()), ("sequential", idx.search_sequential(&qv, t).unwrap())];
            #[cfg(feature = "parallel")]
            variants.push(("parallel", idx.search_parallel(&qv, t).unwrap()));
            for (name, got) in variants {
                let got_ids: Vec<u64> = got.iter().map(|h| h.id.0).collect();
                let want_ids: Vec<u64> = want.iter().map(|w| w.0).collect();
                ensure!(got_ids == want_ids, "{name} t={t}: ids/order differ from brute force");
                for (h, w) in got.iter().zip(&want) {
                    ensure!((h.score - w.1).abs() < 1e-6, "{name} t={t}: score {} vs {}", h.score, w.1);
                }
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!("{checked} query/threshold/variant checks in {secs:.2}s"))
}

fn threshold_monotonicity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    // non-negative vectors and query: every record has a positive score
    let vectors: Vec<Vec<f32>> = (0..60).map(|_| (0..32).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
    let db = index_of(&vectors);
    let q = EmbeddingVector::new((0..32).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap().normalize().unwrap();
    let mut prev = usize::MAX;
    let mut report = Vec::new();
    for t in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0] {
        let hits = retrieve_text(&db, &q, t, None).map_err(|e| e.to_string())?;
        let ctx = assemble(&RetrievedAux { ocr_hits: hits.clone(), ..Default::default() }, &AssembleOptions::default());
        ensure!(hits.len() <= prev, "t={t}: {} records after {prev}", hits.len());
        if t == 0.0 {
            ensure!(hits.len() == db.len(), "t=0 retrieved {} of {}", hits.len(), db.len());
        }
        if t == 1.0 {
            ensure!(hits.is_empty() && ctx.token_estimate == 0, "t=1 gave {} tokens", ctx.token_estimate);
        }
        prev = hits.len();
        report.push(format!("{t}:{}", hits.len()));
    }
    Ok(format!("records per threshold {}", report.join(" ")))
}

fn keyframe_math() -> Outcome {
    let p = KeyframeParams { threshold: 0.3, beta: 4.0, base_frames: 16 };
    let idx16: Vec<u64> = (0..16).collect();
    let uniform = keyframes_from_scores(&[vec![0.42; 16]], &idx16, &p);
    ensure!(uniform.normalized_scores.iter().all(|s| (s - 0.25).abs() < 1e-12), "uniform not 0.25");
    ensure!(uniform.selected.is_empty(), "uniform selected {:?}", uniform.selected);
    let mut spike = vec![0.0; 16];
    spike[9] = 1.0;
    let one_hot = keyframes_from_scores(&[spike], &idx16, &p);
    ensure!(one_hot.selected == vec![9] && one_hot.normalized_scores[9] == 4.0, "one-hot gave {:?}", one_hot.selected);
    let m8 = keyframes_from_scores(&[vec![0.4, 0.1, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05]], &(0..8).collect::<Vec<_>>(), &p);
    ensure!(m8.alpha == 2.0, "alpha {}", m8.alpha);
    for (a, b) in m8.normalized_scores.iter().zip([0.8, 0.2, 0.2, 0.2, 0.2, 0.2, 0.1, 0.1]) {
        ensure!((a - b).abs() < 1e-12, "m=8 normalized {a} vs {b}");
    }
    ensure!(m8.selected == vec![0], "m=8 selected {:?}", m8.selected);

    let mut rng = StdRng::seed_from_u64(3);
    for case in 0..100 {
        let m = rng.random_range(1..64usize);
        let n = rng.random_range(1..5usize);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let c: f64 = 10.0 - rng.random_range(0.0..10.0); // (0, 10]
        let scaled: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|s| s * c).collect()).collect();
        let idx: Vec<u64> = (0..m as u64).collect();
        let a = keyframes_from_scores(&scores, &idx, &p);
        let b = keyframes_from_scores(&scaled, &idx, &p);
        for (x, y) in a.normalized_scores.iter().zip(&b.normalized_scores) {
            ensure!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "case {case}: {x} vs {y} at c={c}");
        }
        // frames within rounding distance of the threshold may legitimately flip
        let clear = |s: &f64| (s - p.threshold).abs() > 1e-9;
        let sel = |k: &vidrag_core::database_builder::KeyframeSelection| -> Vec<u64> {
            k.selected.iter().copied().filter(|f| clear(&a.normalized_scores[*f as usize])).collect()
        };
        ensure!(sel(&a) == sel(&b), "case {case}: selection changed under c={c}");
    }
    Ok("three worked examples exact; 100 random rescalings invariant".into())
}

fn random_detections(rng: &mut StdRng) -> Vec<Detection> {
    let cats = ["person", "car", "dog", "cup", "traffic light"];
    let k = rng.random_range(0..12usize);
    (0..k)
        .map(|_| Detection {
            frame_index: 0,
            category: cats[rng.random_range(0..cats.len())].to_string(),
            bbox: BBox::new(
                f64::from(rng.random_range(0..600u32)),
                f64::from(rng.random_range(0..400u32)),
                f64::from(rng.random_range(1..120u32)),
                f64::from(rng.random_range(1..120u32)),
            ),
            score: 0.9,
        })
        .collect()
}

fn scene_graphs() -> Outcome {
    let cfg = SceneGraphConfig::default();
    let fixed = build_summary(
        4,
        8.0,
        &[
            Detection { frame_index: 4, category: "person".into(), bbox: BBox::new(10.0, 20.0, 30.0, 40.0), score: 0.9 },
            Detection { frame_index: 4, category: "dog".into(), bbox: BBox::new(100.0, 25.0, 20.0, 30.0), score: 0.8 },
        ],
        &cfg,
    );
    let want_loc = [
        "Object 1 is a person located at coordinates [25, 40] with dimensions 30 \u{d7} 40",
        "Object 2 is a dog located at coordinates [110, 40] with dimensions 20 \u{d7} 30",
    ];
    ensure!(fixed.loc_texts == want_loc, "loc texts {:?}", fixed.loc_texts);
    ensure!(fixed.cnt_text == "Object counting:\n- person: 1\n- dog: 1", "cnt text {:?}", fixed.cnt_text);
    ensure!(fixed.rel_texts == ["Object 1 (person) is to the left of Object 2 (dog)"], "rel texts {:?}", fixed.rel_texts);

    let mut rng = StdRng::seed_from_u64(4);
    for case in 0..500 {
        let dets = random_detections(&mut rng);
        let k = dets.len();
        let s = build_summary(0, 0.0, &dets, &cfg);
        let mut want: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &dets {
            *want.entry(d.category.as_str()).or_default() += 1;
        }
        let got: BTreeMap<String, usize> = s.counts().into_iter().collect();
        ensure!(got.len() == want.len() && want.iter().all(|(c, n)| got.get(*c) == Some(n)), "case {case}: counts {got:?} vs {want:?}");
        ensure!(s.loc_texts.len() == k, "case {case}: {} loc texts for {k}", s.loc_texts.len());
        ensure!(s.rel_texts.len() == k * k.saturating_sub(1) / 2, "case {case}: {} pairs for k={k}", s.rel_texts.len());
        for a in &dets {
            for b in &dets {
                ensure!(relation(a, b, &cfg) == relation(b, a, &cfg).inverse(), "case {case}: antisymmetry broken");
            }
        }
        let (dx, dy) = (f64::from(rng.random_range(0..300u32)), f64::from(rng.random_range(0..300u32)));
        let shifted: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { bbox: BBox::new(d.bbox.x_min + dx, d.bbox.y_min + dy, d.bbox.length, d.bbox.width), ..d.clone() })
            .collect();
        let t = build_summary(0, 0.0, &shifted, &cfg);
        ensure!(t.rel_texts == s.rel_texts && t.cnt_text == s.cnt_text, "case {case}: translation changed relations");
    }
    Ok("byte-exact templates; 500 random sets conserve counts, pairs, antisymmetry, translation".into())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let db_dir = tmp.path().join("db");
    run_build(&demo_video(), &db_dir, &PipelineConfig::default(), &Backends::mock(fixtures()), &[]).map_err(|e| e.to_string())?;
    let run = |cfg: &PipelineConfig| -> Result<vidrag_core::pipeline::AuditRecord, String> {
        let db = Database::open(&db_dir).map_err(|e| e.to_string())?;
        let res = Resources::load(cfg).map_err(|e| e.to_string())?;
        Ok(run_ask(&db, &hats(), cfg, &res, &Backends::mock(fixtures())).map_err(|e| e.to_string())?.audit)
    };
    let cfg = PipelineConfig::default();
    let first = run(&cfg)?;
    ensure!(first.predicted == "B", "predicted {}", first.predicted);
    let line = first.to_json_line();
    for i in 1..5 {
        ensure!(run(&cfg)?.to_json_line() == line, "run {i} audit differs");
    }

    let det_only = PipelineConfig { enable_ocr: false, enable_asr: false, ..PipelineConfig::default() };
    let det_ocr = PipelineConfig { enable_asr: false, ..PipelineConfig::default() };
    let steps = [run(&det_only)?.context, run(&det_ocr)?.context, first.context.clone()];
    let of = |c: &vidrag_core::context::AssembledContext, k: AuxKind| c.sections.iter().filter(|s| s.kind == k).cloned().collect::<Vec<_>>();
    ensure!(!of(&steps[0], AuxKind::Det).is_empty(), "DET-only context has no DET sections");
    for w in steps.windows(2) {
        ensure!(
            w[1].sections.len() > w[0].sections.len() && w[1].token_estimate > w[0].token_estimate,
            "context did not grow ({} -> {} sections)",
            w[0].sections.len(),
            w[1].sections.len()
        );
    }
    ensure!(of(&steps[1], AuxKind::Det) == of(&steps[0], AuxKind::Det), "+OCR perturbed DET sections");
    ensure!(
        of(&steps[2], AuxKind::Det) == of(&steps[1], AuxKind::Det) && of(&steps[2], AuxKind::Ocr) == of(&steps[1], AuxKind::Ocr),
        "+ASR perturbed other sections"
    );
    Ok(format!(
        "5 identical audits ({} bytes); DET/+OCR/+ASR tokens {} < {} < {}",
        line.len(),
        steps[0].token_estimate,
        steps[1].token_estimate,
        steps[2].token_estimate
    ))
}

fn budget_preset() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let vocab = ["sale", "price", "hat", "street", "exit", "dog", "the", "a", "bicycle", "red", "20", "%", "!", "morning"];
    let sentence = |rng: &mut StdRng, max: usize| -> String {
        (0..rng.random_range(1..max)).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    let mut over = 0;
    let mut max_tokens = 0;
    for case in 0..50 {
        let n_ocr = rng.random_range(0..40);
        let n_asr = rng.random_range(0..40);
        let n_det = rng.random_range(0..10);
        let hit = |rng: &mut StdRng, kind: AuxKind, i: u64, text: String| {
            let t = rng.random_range(0.0..600.0);
            let record = match kind {
                AuxKind::Asr => AuxRecord::span(RecordId(i), t, t + rng.random_range(1.0..10.0), text),
                k => AuxRecord::frame(RecordId(i), k, i, t, text),
            };
            ScoredRecord { record, score: rng.random_range(0.3..1.0) }
        };
        let ocr_hits = (0..n_ocr).map(|i| { let s = sentence(&mut rng, 30); hit(&mut rng, AuxKind::Ocr, i, s) }).collect();
        let asr_hits = (0..n_asr).map(|i| { let s = sentence(&mut rng, 120); hit(&mut rng, AuxKind::Asr, i, s) }).collect();
        let det = (0..n_det)
            .map(|i| DetSelection {
                frame_index: i * 7,
                timestamp_s: rng.random_range(0.0..600.0),
                loc_texts: (0..rng.random_range(1..15)).map(|_| sentence(&mut rng, 14)).collect(),
                cnt_text: Some(format!("Object counting:\n- hat: {i}")),
                rel_texts: (0..rng.random_range(0..40)).map(|_| sentence(&mut rng, 10)).collect(),
                score: rng.random_range(0.0..2.0),
            })
            .collect();
        let aux = RetrievedAux { ocr_hits, asr_hits, det };
        let unbounded = assemble(&aux, &AssembleOptions::default());
        if unbounded.token_estimate > PAPER_DEFAULT_BUDGET {
            over += 1;
        }
        let ctx = assemble(&aux, &AssembleOptions { budget_tokens: Some(PAPER_DEFAULT_BUDGET), ..Default::default() });
        ensure!(
            ctx.token_estimate <= PAPER_DEFAULT_BUDGET || ctx.sections.len() == 1,
            "case {case}: {} tokens in {} sections",
            ctx.token_estimate,
            ctx.sections.len()
        );
        max_tokens = max_tokens.max(ctx.token_estimate);
    }
    ensure!(over >= 10, "only {over} cases exceeded the budget before trimming");
    Ok(format!("50 cases ({over} needed trimming), max {max_tokens} tokens"))
}

fn valid_answer_prompt(a: &vidrag_core::pipeline::AuditRecord, q: &Query) -> Result<(), String> {
    ensure!(a.answer_prompt.contains(&format!("Question: {}", q.question)), "prompt lacks question");
    for o in &q.options {
        ensure!(a.answer_prompt.contains(o.as_str()), "prompt lacks option {o}");
    }
    ensure!(a.answer_prompt.contains("Answer with the option's letter"), "prompt lacks instruction");
    ensure!(!a.raw_output.is_empty(), "empty model output");
    Ok(())
}

fn degradation() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let res = Resources::load(&cfg).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();

    let silent = copy_video(tmp.path(), &["audio.wav"]);
    let b = Backends::mock(fixtures());
    let report = run_build(&silent, &tmp.path().join("silent-db"), &cfg, &b, &[]).map_err(|e| format!("no-audio build: {e}"))?;
    ensure!(report.meta.asr_records == 0, "no-audio build has ASR records");
    let db = Database::open(&report.db_dir).map_err(|e| e.to_string())?;
    let a = run_ask(&db, &hats(), &cfg, &res, &b).map_err(|e| format!("no-audio ask: {e}"))?.audit;
    valid_answer_prompt(&a, &hats())?;
    ensure!(!a.context.sections.iter().any(|s| s.kind == AuxKind::Asr), "ASR section without audio");
    notes.push(format!("no-audio ok ({} tokens)", a.aux_tokens));

    let db_dir = tmp.path().join("db");
    run_build(&demo_video(), &db_dir, &cfg, &b, &[]).map_err(|e| e.to_string())?;
    let db = Database::open(&db_dir).map_err(|e| e.to_string())?;
    let a = run_ask(&db, &opened(), &cfg, &res, &b).map_err(|e| format!("all-NULL ask: {e}"))?.audit;
    valid_answer_prompt(&a, &opened())?;
    ensure!(a.det.is_none(), "DET ran on an all-NULL reply");
    notes.push(format!("all-NULL ok ({} tokens)", a.aux_tokens));

    let mut f = fixtures();
    f.ocr.clear();
    let b = Backends::mock(f);
    let report = run_build(&demo_video(), &tmp.path().join("no-ocr-db"), &cfg, &b, &[]).map_err(|e| format!("empty-OCR build: {e}"))?;
    ensure!(report.meta.ocr_records == 0, "OCR records from empty OCR");
    let db = Database::open(&report.db_dir).map_err(|e| e.to_string())?;
    let a = run_ask(&db, &exit(), &cfg, &res, &b).map_err(|e| format!("empty-OCR ask: {e}"))?.audit;
    valid_answer_prompt(&a, &exit())?;
    notes.push(format!("empty-OCR ok ({} tokens)", a.aux_tokens));
    Ok(notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("index-oracle equivalence", index_oracle),
        ("threshold monotonicity", threshold_monotonicity),
        ("keyframe math", keyframe_math),
        ("scene-graph suite", scene_graphs),
        ("end-to-end determinism and ablation", end_to_end),
        ("budget preset", budget_preset),
        ("degradation paths", degradation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
