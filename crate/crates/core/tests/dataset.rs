use std::collections::BTreeMap;

use llmrank::dataset::{filter_dataset, ingest_dataset, stratified_split, FilterSpec};
use llmrank::{Dataset, ModelPool, PromptRecord, SplitSpec};

const TABLE_1: [(&str, usize); 10] = [
    ("mmlu", 13_408),
    ("hellaswag", 9_800),
    ("gsm8k", 7_450),
    ("arc-challenge", 1_456),
    ("winogrande", 1_267),
    ("mbpp", 370),
    ("consensus", 362),
    ("abstract2title", 254),
    ("bias-detection", 176),
    ("mt-bench", 80),
];

fn table_1_dataset() -> Dataset {
    let pool = ModelPool::new(["small", "large"]).unwrap();
    let mut records = Vec::new();
    for (bench, n) in TABLE_1 {
        for i in 0..n {
            records.push(PromptRecord {
                sample_id: format!("{bench}.{i}"),
                prompt: format!("question {i} from {bench}"),
                benchmark: bench.to_string(),
                quality: vec![(i % 2) as f64, 1.0],
                cost: vec![0.0001, 0.002],
                language: "en".into(),
            });
        }
    }
    Dataset::new(pool, records, "table-1 layout").unwrap()
}

#[test]
fn table_1_strata_survive_filtering_and_split_by_the_rounding_rule() {
    let d = table_1_dataset();
    let d = filter_dataset(&d, &FilterSpec::default()).unwrap();
    assert_eq!(d.len(), 34_623);
    assert_eq!(d.category_counts().len(), 10);

    let spec = SplitSpec {
        seed: 7,
        ..SplitSpec::default()
    };
    let splits = stratified_split(&d, &spec).unwrap();
    let mut counted: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for (k, part) in [&splits.train, &splits.val, &splits.test].into_iter().enumerate() {
        for r in &part.records {
            *counted.entry((r.benchmark.as_str(), k)).or_default() += 1;
        }
    }
    for (bench, n) in TABLE_1 {
        // integer percentages: floor for train and val, remainder for test
        let train = n * 70 / 100;
        let val = n * 15 / 100;
        let expected = [train, val, n - train - val];
        for (k, want) in expected.into_iter().enumerate() {
            assert_eq!(counted.get(&(bench, k)).copied().unwrap_or(0), want, "{bench} split {k}");
        }
    }
    assert_eq!(splits.train.len() + splits.val.len() + splits.test.len(), 34_623);
}

#[test]
fn split_membership_is_a_seeded_partition() {
    let d = table_1_dataset();
    let spec = SplitSpec {
        seed: 3,
        ..SplitSpec::default()
    };
    let a = stratified_split(&d, &spec).unwrap();
    let b = stratified_split(&d, &spec).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.val, b.val);
    assert_eq!(a.test, b.test);

    let c = stratified_split(&d, &SplitSpec { seed: 4, ..spec }).unwrap();
    assert_ne!(a.train.records, c.train.records);

    let mut ids: Vec<&str> = [&a.train, &a.val, &a.test]
        .iter()
        .flat_map(|p| p.records.iter().map(|r| r.sample_id.as_str()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), d.len());
}

#[test]
fn write_then_ingest_round_trips() {
    let pool = ModelPool::new(["a", "b", "c"]).unwrap();
    let records = vec![
        PromptRecord {
            sample_id: "mmlu.anatomy.1".into(),
            prompt: "Line one\nline \"two\"\twith tab, émoji 🚀".into(),
            benchmark: "mmlu".into(),
            quality: vec![0.25, 1.0, 0.0],
            cost: vec![1e-6, 0.0123456789, 0.0],
            language: "en".into(),
        },
        PromptRecord {
            sample_id: "x".into(),
            prompt: "¿Qué?".into(),
            benchmark: "other".into(),
            quality: vec![0.1, 0.2, 0.30000000000000004],
            cost: vec![0.5, 0.25, 0.125],
            language: "es".into(),
        },
    ];
    let d = Dataset::new(pool.clone(), records, "fixture").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    d.write_jsonl(&path).unwrap();
    let back = ingest_dataset(&path, &pool).unwrap();
    assert_eq!(back.records, d.records);
    assert_eq!(back.pool, d.pool);
}
