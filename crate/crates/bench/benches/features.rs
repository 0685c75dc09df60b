use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use llmrank::embeddings::hash_embed;
use llmrank::features::extract_features;
use llmrank::synthetic::KeywordCorpus;

const ARC: &str = "Which of the following is found in prokaryotic cells?\nA) nucleus\nB) ribosomes\nC) mitochondria\nD) lysosomes\nPrint only a single choice from \"A\" or \"B\" or \"C\" or \"D\" without explanation. Answer:";

fn features(c: &mut Criterion) {
    let schema = llmrank_bench::base_schema();
    let corpus = KeywordCorpus::new(256, 3).generate().unwrap();

    let mut group = c.benchmark_group("features");
    group.bench_function("extract_arc_prompt", |b| {
        b.iter(|| extract_features(black_box(ARC), &schema, None).unwrap())
    });
    group.throughput(Throughput::Elements(corpus.len() as u64));
    group.bench_function("extract_corpus_256", |b| {
        b.iter(|| {
            for r in &corpus.records {
                black_box(extract_features(&r.prompt, &schema, None).unwrap());
            }
        })
    });
    group.bench_function("hash_embed_256_corpus_256", |b| {
        b.iter(|| {
            for r in &corpus.records {
                black_box(hash_embed(&r.prompt, 256).unwrap());
            }
        })
    });
    group.finish();
}

criterion_group!(benches, features);
criterion_main!(benches);
