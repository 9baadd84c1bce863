use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use vidrag_core::ports::{BBox, Detection};
use vidrag_core::scene_graph::{build_summaries, build_summary, FrameDetections, SceneGraphConfig};
use vidrag_core::{AuxKind, AuxRecord, EmbeddingVector, FlatIndex, IndexEntry, RecordId};

fn random_index(rows: usize, dim: usize, rng: &mut impl Rng) -> FlatIndex {
    let entries = (0..rows)
        .map(|i| IndexEntry {
            vector: EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            record: AuxRecord::frame(RecordId(i as u64), AuxKind::Ocr, i as u64, i as f64, format!("row {i}")),
        })
        .collect();
    let mut idx = FlatIndex::new();
    idx.add(entries).unwrap();
    idx
}

fn search(c: &mut Criterion) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut group = c.benchmark_group("flat_search");
    for rows in [1_000usize, 10_000, 100_000] {
        let idx = random_index(rows, 256, &mut rng);
        let q = EmbeddingVector::new((0..256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", rows), &rows, |b, _| {
            b.iter(|| idx.search_sequential(&q, 0.1).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", rows), &rows, |b, _| {
            b.iter(|| idx.search_parallel(&q, 0.1).unwrap())
        });
    }
    group.finish();
}

fn scene_graphs(c: &mut Criterion) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let frames: Vec<FrameDetections> = (0..64u64)
        .map(|f| FrameDetections {
            frame_index: f,
            timestamp_s: f as f64,
            detections: (0..40)
                .map(|_| Detection {
                    frame_index: f,
                    category: ["person", "car", "dog", "cup"][rng.random_range(0..4)].into(),
                    bbox: BBox::new(rng.random_range(0.0..600.0), rng.random_range(0.0..400.0), rng.random_range(1.0..80.0), rng.random_range(1.0..80.0)),
                    score: 0.9,
                })
                .collect(),
        })
        .collect();
    let cfg = SceneGraphConfig::default();
    let mut group = c.benchmark_group("scene_graphs");
    group.bench_function("sequential", |b| {
        b.iter(|| frames.iter().map(|f| build_summary(f.frame_index, f.timestamp_s, &f.detections, &cfg)).collect::<Vec<_>>())
    });
    group.bench_function("batch", |b| b.iter(|| build_summaries(&frames, &cfg)));
    group.finish();
}

criterion_group!(benches, search, scene_graphs);
criterion_main!(benches);
