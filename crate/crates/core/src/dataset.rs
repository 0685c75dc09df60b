//! Record ingestion, validation, filtering and stratified splitting.
//!
//! Records travel as JSON-Lines, one object per line:
//!
//! ```text
//! {"sample_id":"arc.test.1","prompt":"...","benchmark":"arc","quality":[1.0,0.0],"cost":[0.001,0.002],"language":"en"}
//! ```
//!
//! The model order for `quality` and `cost` comes from a sidecar `pool.json`
//! holding a JSON array of model names.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered candidate models. Position `j` is the canonical model index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ModelPool {
    names: Vec<String>,
}

impl ModelPool {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "model pool needs at least 2 models, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate model name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// SHA-256 over the newline-joined names, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.names {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

impl TryFrom<Vec<String>> for ModelPool {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        ModelPool::new(names)
    }
}

impl From<ModelPool> for Vec<String> {
    fn from(pool: ModelPool) -> Self {
        pool.names
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn default_language() -> String {
    "en".to_string()
}

/// One prompt with per-model quality in `[0, 1]` and per-model dollar cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub sample_id: String,
    pub prompt: String,
    pub benchmark: String,
    pub quality: Vec<f64>,
    pub cost: Vec<f64>,
    #[serde(default = "default_language")]
    pub language: String,
}

impl PromptRecord {
    /// Checks the record against a pool of `m` models.
    pub fn validate(&self, m: usize) -> std::result::Result<(), String> {
        if self.sample_id.is_empty() {
            return Err("empty sample_id".into());
        }
        if self.quality.len() != m {
            return Err(format!(
                "quality vector length {} != pool size {m}",
                self.quality.len()
            ));
        }
        if self.cost.len() != m {
            return Err(format!("cost vector length {} != pool size {m}", self.cost.len()));
        }
        if let Some(q) = self
            .quality
            .iter()
            .find(|q| !q.is_finite() || !(0.0..=1.0).contains(*q))
        {
            return Err(format!("quality out of range: {q}"));
        }
        if let Some(c) = self.cost.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(format!("cost out of range: {c}"));
        }
        Ok(())
    }

    pub fn best_quality(&self) -> f64 {
        self.quality.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A validated collection of records sharing one model pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pool: ModelPool,
    pub records: Vec<PromptRecord>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset, enforcing per-record invariants and sample_id uniqueness.
    pub fn new(pool: ModelPool, records: Vec<PromptRecord>, provenance: impl Into<String>) -> Result<Self> {
        let m = pool.len();
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(m)
                .map_err(|reason| Error::InvalidDataset(format!("record {i} ({}): {reason}", r.sample_id)))?;
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateId(r.sample_id.clone()));
            }
        }
        Ok(Self {
            pool,
            records,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_models(&self) -> usize {
        self.pool.len()
    }

    /// Same pool and provenance, different records. Records are assumed valid.
    pub(crate) fn with_records(&self, records: Vec<PromptRecord>, provenance: String) -> Dataset {
        Dataset {
            pool: self.pool.clone(),
            records,
            provenance,
        }
    }

    pub fn quality_matrix(&self) -> Array2<f64> {
        self.matrix(|r| &r.quality)
    }

    pub fn cost_matrix(&self) -> Array2<f64> {
        self.matrix(|r| &r.cost)
    }

    fn matrix(&self, field: impl Fn(&PromptRecord) -> &Vec<f64>) -> Array2<f64> {
        let m = self.num_models();
        let mut out = Array2::zeros((self.len(), m));
        for (mut row, r) in out.rows_mut().into_iter().zip(&self.records) {
            row.assign(&ndarray::ArrayView1::from(field(r).as_slice()));
        }
        out
    }

    /// Record count per benchmark category.
    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.benchmark.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Record count per subject within one benchmark, keyed by the sample_id
    /// prefix before the first `.` (e.g. `mmlu-anatomy.test.12` → `mmlu-anatomy`).
    pub fn subject_counts(&self, benchmark: &str) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.benchmark == benchmark) {
            let subject = r.sample_id.split('.').next().unwrap_or(&r.sample_id);
            *counts.entry(subject.to_string()).or_insert(0) += 1;
        }
        counts
    }

    /// SHA-256 over the sample_ids in order. Identifies which records an artifact saw.
    pub fn id_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.records {
            hasher.update(r.sample_id.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A line that failed validation during lenient ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

/// Reads a JSON-Lines dataset, failing on the first invalid line.
pub fn ingest_dataset(path: impl AsRef<Path>, pool: &ModelPool) -> Result<Dataset> {
    let (dataset, rejects) = ingest_lenient(path, pool)?;
    match rejects.into_iter().next() {
        Some(Rejected { line, reason }) => Err(Error::BadRecord { line, reason }),
        None => Ok(dataset),
    }
}

/// Reads a JSON-Lines dataset, collecting invalid lines instead of failing.
///
/// Blank lines are skipped. A repeated sample_id rejects the later line.
/// Only I/O failures are returned as errors.
pub fn ingest_lenient(path: impl AsRef<Path>, pool: &ModelPool) -> Result<(Dataset, Vec<Rejected>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let m = pool.len();
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PromptRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Rejected {
                    line: line_no,
                    reason: format!("malformed line: {e}"),
                });
                continue;
            }
        };
        if let Err(reason) = record.validate(m) {
            rejects.push(Rejected { line: line_no, reason });
            continue;
        }
        if !seen.insert(record.sample_id.clone()) {
            rejects.push(Rejected {
                line: line_no,
                reason: format!("duplicate sample_id {:?}", record.sample_id),
            });
            continue;
        }
        records.push(record);
    }
    let dataset = Dataset {
        pool: pool.clone(),
        records,
        provenance: path.display().to_string(),
    };
    Ok((dataset, rejects))
}

/// Writes `line<TAB>reason` rows.
pub fn write_rejects(path: impl AsRef<Path>, rejects: &[Rejected]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in rejects {
        out.push_str(&format!("{}\t{}\n", r.line, r.reason));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Record filters, applied in order: language, unsolved, category size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub min_category_samples: usize,
    pub drop_unsolved: bool,
    pub keep_languages: BTreeSet<String>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            min_category_samples: 50,
            drop_unsolved: true,
            keep_languages: BTreeSet::from(["en".to_string()]),
        }
    }
}

/// Drops disallowed languages, then prompts no model solves, then every
/// category left with fewer than `min_category_samples` records.
pub fn filter_dataset(d: &Dataset, spec: &FilterSpec) -> Result<Dataset> {
    let survivors: Vec<&PromptRecord> = d
        .records
        .iter()
        .filter(|r| spec.keep_languages.contains(&r.language))
        .filter(|r| !spec.drop_unsolved || r.best_quality() > 0.0)
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &survivors {
        *counts.entry(r.benchmark.as_str()).or_insert(0) += 1;
    }
    let records: Vec<PromptRecord> = survivors
        .into_iter()
        .filter(|r| counts[r.benchmark.as_str()] >= spec.min_category_samples)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::AllFiltered);
    }
    Ok(d.with_records(records, format!("{} | filtered", d.provenance)))
}

/// Field used to group records before splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    #[default]
    Benchmark,
    Language,
}

impl StratifyBy {
    fn key<'a>(&self, r: &'a PromptRecord) -> &'a str {
        match self {
            StratifyBy::Benchmark => &r.benchmark,
            StratifyBy::Language => &r.language,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify_by: StratifyBy,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 0,
            stratify_by: StratifyBy::Benchmark,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must lie in (0, 1): {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for one stratum of `n` records: floor train, floor val,
    /// remainder to test, then move single records from the largest split into
    /// any empty one (the later split on ties).
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        // The epsilon keeps exact products such as 100 * 0.7 from flooring to 69.
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let train = floor(self.train_frac).min(n);
        let val = floor(self.val_frac).min(n - train);
        let mut sizes = [train, val, n - train - val];
        while n >= 3 && sizes.contains(&0) {
            let empty = sizes.iter().position(|&s| s == 0).unwrap();
            let largest = (0..3).max_by_key(|&i| (sizes[i], i)).unwrap();
            sizes[largest] -= 1;
            sizes[empty] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Shuffles each stratum with a ChaCha8 stream seeded by `spec.seed` and cuts
/// it by [`SplitSpec::sizes`]. Within each split, records keep input order.
pub fn stratified_split(d: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in d.records.iter().enumerate() {
        strata.entry(spec.stratify_by.key(r)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assignment = vec![0u8; d.len()];
    for (name, mut members) in strata {
        if members.len() < 3 {
            return Err(Error::StratumTooSmall {
                stratum: name.to_string(),
                size: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let [train, val, _] = spec.sizes(members.len());
        for (pos, idx) in members.into_iter().enumerate() {
            assignment[idx] = if pos < train {
                0
            } else if pos < train + val {
                1
            } else {
                2
            };
        }
    }
    let pick = |which: u8, label: &str| {
        let records = d
            .records
            .iter()
            .zip(&assignment)
            .filter(|(_, a)| **a == which)
            .map(|(r, _)| r.clone())
            .collect();
        d.with_records(records, format!("{} | {label} split seed {}", d.provenance, spec.seed))
    };
    Ok(Splits {
        train: pick(0, "train"),
        val: pick(1, "val"),
        test: pick(2, "test"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool2() -> ModelPool {
        ModelPool::new(["a", "b"]).unwrap()
    }

    fn record(id: &str, bench: &str, q: [f64; 2]) -> PromptRecord {
        PromptRecord {
            sample_id: id.into(),
            prompt: format!("prompt {id}"),
            benchmark: bench.into(),
            quality: q.to_vec(),
            cost: vec![0.001, 0.002],
            language: "en".into(),
        }
    }

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn pool_rejects_duplicates_and_singletons() {
        assert!(ModelPool::new(["a"]).is_err());
        assert!(ModelPool::new(["a", "a"]).is_err());
        let pool: ModelPool = serde_json::from_str(r#"["x","y","z"]"#).unwrap();
        assert_eq!(pool.len(), 3);
        assert!(serde_json::from_str::<ModelPool>(r#"["x"]"#).is_err());
    }

    #[test]
    fn ingest_single_line() {
        let f = write(&[
            r#"{"sample_id":"s1","prompt":"hi","benchmark":"b","quality":[1.0,0.0],"cost":[0.001,0.002]}"#,
        ]);
        let d = ingest_dataset(f.path(), &pool2()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.records[0].language, "en");
        assert_eq!(d.records[0].cost, vec![0.001, 0.002]);
    }

    #[test]
    fn ingest_reports_quality_range_with_line_number() {
        let f = write(&[
            r#"{"sample_id":"s1","prompt":"hi","benchmark":"b","quality":[1.0,0.0],"cost":[0.0,0.0]}"#,
            "",
            r#"{"sample_id":"s2","prompt":"hi","benchmark":"b","quality":[1.2,0.0],"cost":[0.0,0.0]}"#,
        ]);
        match ingest_dataset(f.path(), &pool2()) {
            Err(Error::BadRecord { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("quality out of range"), "{reason}");
            }
            other => panic!("expected BadRecord, got {other:?}"),
        }
    }

    #[test]
    fn ingest_lenient_collects_each_failure_kind() {
        let f = write(&[
            r#"{"sample_id":"s1","prompt":"hi","benchmark":"b","quality":[1.0,0.0],"cost":[0.0,0.0]}"#,
            "not json",
            r#"{"sample_id":"s2","prompt":"hi","benchmark":"b","quality":[1.0],"cost":[0.0,0.0]}"#,
            r#"{"sample_id":"s1","prompt":"again","benchmark":"b","quality":[1.0,0.0],"cost":[0.0,0.0]}"#,
            r#"{"sample_id":"s3","prompt":"hi","benchmark":"b","quality":[1.0,0.0],"cost":[-1.0,0.0]}"#,
        ]);
        let (d, rejects) = ingest_lenient(f.path(), &pool2()).unwrap();
        assert_eq!(d.len(), 1);
        let lines: Vec<usize> = rejects.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5]);
        assert!(rejects[0].reason.starts_with("malformed line"));
        assert!(rejects[1].reason.contains("length"));
        assert!(rejects[2].reason.contains("duplicate"));
        assert!(rejects[3].reason.contains("cost out of range"));
    }

    #[test]
    fn category_of_49_is_dropped() {
        let mut records: Vec<_> = (0..49).map(|i| record(&format!("small{i}"), "small", [1.0, 0.0])).collect();
        records.extend((0..50).map(|i| record(&format!("big{i}"), "big", [1.0, 0.0])));
        let d = Dataset::new(pool2(), records, "t").unwrap();
        let f = filter_dataset(&d, &FilterSpec::default()).unwrap();
        assert_eq!(f.len(), 50);
        assert!(f.records.iter().all(|r| r.benchmark == "big"));
    }

    #[test]
    fn unsolved_and_foreign_records_are_dropped_before_counting() {
        // 50 records, but one is unsolved and one is Chinese: the category falls below 50.
        let mut records: Vec<_> = (0..48).map(|i| record(&format!("r{i}"), "c", [0.0, 1.0])).collect();
        records.push(record("unsolved", "c", [0.0, 0.0]));
        let mut zh = record("zh", "c", [1.0, 1.0]);
        zh.language = "zh".into();
        records.push(zh);
        let d = Dataset::new(pool2(), records, "t").unwrap();
        assert!(matches!(filter_dataset(&d, &FilterSpec::default()), Err(Error::AllFiltered)));

        let lenient = FilterSpec {
            min_category_samples: 1,
            ..FilterSpec::default()
        };
        let f = filter_dataset(&d, &lenient).unwrap();
        assert_eq!(f.len(), 48);
    }

    #[test]
    fn split_sizes_rounding_rule() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(100), [70, 15, 15]);
        assert_eq!(spec.sizes(3), [1, 1, 1]);
        assert_eq!(spec.sizes(4), [2, 1, 1]);
        assert_eq!(spec.sizes(10), [7, 1, 2]);
    }

    #[test]
    fn tiny_stratum_is_named_in_error() {
        let mut records: Vec<_> = (0..10).map(|i| record(&format!("a{i}"), "ok", [1.0, 0.0])).collect();
        records.push(record("t1", "tiny", [1.0, 0.0]));
        records.push(record("t2", "tiny", [1.0, 0.0]));
        let d = Dataset::new(pool2(), records, "t").unwrap();
        match stratified_split(&d, &SplitSpec::default()) {
            Err(Error::StratumTooSmall { stratum, size }) => {
                assert_eq!(stratum, "tiny");
                assert_eq!(size, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_spec_validation() {
        let bad = SplitSpec {
            train_frac: 0.7,
            val_frac: 0.2,
            test_frac: 0.2,
            ..SplitSpec::default()
        };
        assert!(bad.validate().is_err());
        let zero = SplitSpec {
            train_frac: 1.0,
            val_frac: 0.0,
            test_frac: 0.0,
            ..SplitSpec::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn subject_counts_use_id_prefix() {
        let records = vec![
            record("mmlu-anatomy.test.1", "mmlu", [1.0, 0.0]),
            record("mmlu-anatomy.test.2", "mmlu", [1.0, 0.0]),
            record("mmlu-law.test.1", "mmlu", [1.0, 0.0]),
            record("gsm.test.1", "gsm", [1.0, 0.0]),
        ];
        let d = Dataset::new(pool2(), records, "t").unwrap();
        let counts = d.subject_counts("mmlu");
        assert_eq!(counts.len(), 2);
        assert_eq!(counts["mmlu-anatomy"], 2);
    }
}
