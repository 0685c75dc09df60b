//! Routing decisions, oracle and fixed-model baselines, evaluation metrics,
//! group attributions and λ sweeps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PromptRecord};
use crate::embeddings::EmbeddingVector;
use crate::error::{Error, Result};
use crate::features::{FeatureGroup, FeatureSchema, FeatureVector};
use crate::pipeline::{train_router, PreparedSplit};
use crate::ranker::{argmax, forward_batch, predict_scores, DropoutMasks, RankerParams, TrainConfig, TrainingLog};

/// The model chosen for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterDecision {
    pub sample_id: String,
    pub chosen_index: usize,
    /// Predicted utilities; empty for policies that do not score.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_cost: Option<f64>,
}

impl RouterDecision {
    pub fn new(sample_id: impl Into<String>, chosen_index: usize) -> Self {
        Self {
            sample_id: sample_id.into(),
            chosen_index,
            scores: Vec::new(),
            realized_quality: None,
            realized_cost: None,
        }
    }

    pub fn from_scores(sample_id: impl Into<String>, scores: Vec<f64>) -> Self {
        let mut d = Self::new(sample_id, argmax(scores.iter().copied()));
        d.scores = scores;
        d
    }
}

/// Highest score wins; the lowest index wins exact ties.
pub fn choose(scores: &[f64]) -> usize {
    argmax(scores.iter().copied())
}

fn single_row(params: &RankerParams, x_j: &FeatureVector, x_t: &EmbeddingVector) -> Result<Vec<f64>> {
    if x_j.schema_version != params.feature_schema_version {
        return Err(Error::FingerprintMismatch(format!(
            "feature schema version {} vs checkpoint {}",
            x_j.schema_version, params.feature_schema_version
        )));
    }
    let x_feat = Array2::from_shape_vec((1, x_j.dim()), x_j.values.clone()).expect("row vector");
    let x_text = Array2::from_shape_fn((1, x_t.dim()), |(_, j)| f64::from(x_t.values[j]));
    let out = forward_batch(&params.weights, x_feat.view(), x_text.view(), DropoutMasks::none())?;
    Ok(out.scores.row(0).to_vec())
}

/// Scores one prompt in inference mode and picks the argmax.
pub fn route(
    params: &RankerParams,
    sample_id: &str,
    x_j: &FeatureVector,
    x_t: &EmbeddingVector,
) -> Result<RouterDecision> {
    Ok(RouterDecision::from_scores(sample_id, single_row(params, x_j, x_t)?))
}

/// Routes every record of a prepared split.
pub fn route_split(params: &RankerParams, split: &PreparedSplit) -> Result<Vec<RouterDecision>> {
    let scores = predict_scores(
        &params.weights,
        split.inputs.features.view(),
        split.inputs.embeddings.view(),
    )?;
    Ok(split
        .dataset
        .records
        .iter()
        .zip(scores.rows())
        .map(|(r, s)| RouterDecision::from_scores(&r.sample_id, s.to_vec()))
        .collect())
}

/// Cheapest model among those with the highest quality; lowest index on residual ties.
pub fn oracle_route(record: &PromptRecord) -> usize {
    let best_q = record.best_quality();
    let mut best: Option<usize> = None;
    for (j, (&q, &c)) in record.quality.iter().zip(&record.cost).enumerate() {
        if q == best_q && best.is_none_or(|b| c < record.cost[b]) {
            best = Some(j);
        }
    }
    best.unwrap_or(0)
}

pub fn oracle_decisions(d: &Dataset) -> Vec<RouterDecision> {
    d.records
        .iter()
        .map(|r| RouterDecision::new(&r.sample_id, oracle_route(r)))
        .collect()
}

fn fixed_decisions(d: &Dataset, model: usize) -> Vec<RouterDecision> {
    d.records.iter().map(|r| RouterDecision::new(&r.sample_id, model)).collect()
}

/// Model with the highest mean quality on `d` (lowest index on ties).
pub fn best_single_model(d: &Dataset) -> usize {
    let q = d.quality_matrix();
    argmax(q.columns().into_iter().map(|c| c.sum()))
}

/// Model with the lowest total cost on `d` (lowest index on ties).
pub fn cheapest_model(d: &Dataset) -> usize {
    let c = d.cost_matrix();
    argmax(c.columns().into_iter().map(|c| -c.sum()))
}

/// Routes every prompt to the best model on average.
pub fn baseline_best_single(d: &Dataset) -> Vec<RouterDecision> {
    fixed_decisions(d, best_single_model(d))
}

/// Routes every prompt to the cheapest model in total.
pub fn baseline_cheapest(d: &Dataset) -> Vec<RouterDecision> {
    fixed_decisions(d, cheapest_model(d))
}

/// Uniformly random routing, seeded.
pub fn baseline_random(d: &Dataset, seed: u64) -> Vec<RouterDecision> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = d.num_models();
    d.records
        .iter()
        .map(|r| RouterDecision::new(&r.sample_id, rng.random_range(0..m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkBreakdown {
    pub count: usize,
    pub quality: f64,
    pub oracle_quality: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShare {
    pub model: String,
    pub fraction: f64,
}

/// Quality, cost and utility of a routing policy, compared against the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub lambda: f64,
    pub quality: f64,
    pub mean_cost: f64,
    pub total_cost: f64,
    pub utility: f64,
    pub oracle_quality: f64,
    pub oracle_mean_cost: f64,
    pub oracle_total_cost: f64,
    /// `quality / oracle_quality`.
    pub efficiency: f64,
    /// `total_cost / oracle_total_cost`.
    pub cost_ratio: f64,
    /// `oracle_quality - quality`.
    pub quality_gap: f64,
    pub per_benchmark: BTreeMap<String, BenchmarkBreakdown>,
    /// Fraction of prompts routed to each model, in pool order.
    pub routing_distribution: Vec<ModelShare>,
}

/// Scores `decisions` against the labels in `d`.
///
/// Every record needs exactly one decision. Aggregates are summed in
/// sample_id order, so the report does not depend on record order.
pub fn evaluate(decisions: &[RouterDecision], d: &Dataset, lambda: f64) -> Result<EvalReport> {
    if !crate::ranker::non_negative(lambda) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    if d.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate on an empty dataset".into()));
    }
    let m = d.num_models();
    let mut chosen: HashMap<&str, usize> = HashMap::with_capacity(decisions.len());
    for dec in decisions {
        if dec.chosen_index >= m {
            return Err(Error::InvalidConfig(format!(
                "decision for {} picks model {} of {m}",
                dec.sample_id, dec.chosen_index
            )));
        }
        if chosen.insert(dec.sample_id.as_str(), dec.chosen_index).is_some() {
            return Err(Error::DuplicateId(dec.sample_id.clone()));
        }
    }
    let ids: HashSet<&str> = d.records.iter().map(|r| r.sample_id.as_str()).collect();
    if let Some(extra) = chosen.keys().find(|id| !ids.contains(*id)) {
        return Err(Error::InvalidDataset(format!("decision for unknown sample_id {extra:?}")));
    }

    let mut order: Vec<&PromptRecord> = d.records.iter().collect();
    order.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let (mut q_sum, mut c_sum, mut oq_sum, mut oc_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut counts = vec![0usize; m];
    let mut bench: BTreeMap<&str, (usize, f64, f64, f64)> = BTreeMap::new();
    for r in order {
        let j = *chosen
            .get(r.sample_id.as_str())
            .ok_or_else(|| Error::MissingId(r.sample_id.clone()))?;
        let o = oracle_route(r);
        q_sum += r.quality[j];
        c_sum += r.cost[j];
        oq_sum += r.quality[o];
        oc_sum += r.cost[o];
        counts[j] += 1;
        let b = bench.entry(r.benchmark.as_str()).or_default();
        b.0 += 1;
        b.1 += r.quality[j];
        b.2 += r.quality[o];
        b.3 += r.cost[j];
    }
    let n = d.len() as f64;
    let quality = q_sum / n;
    let oracle_quality = oq_sum / n;
    let mean_cost = c_sum / n;
    Ok(EvalReport {
        n: d.len(),
        lambda,
        quality,
        mean_cost,
        total_cost: c_sum,
        utility: quality - lambda * mean_cost,
        oracle_quality,
        oracle_mean_cost: oc_sum / n,
        oracle_total_cost: oc_sum,
        efficiency: quality / oracle_quality,
        cost_ratio: c_sum / oc_sum,
        quality_gap: oracle_quality - quality,
        per_benchmark: bench
            .into_iter()
            .map(|(name, (count, q, oq, c))| {
                let k = count as f64;
                (
                    name.to_string(),
                    BenchmarkBreakdown {
                        count,
                        quality: q / k,
                        oracle_quality: oq / k,
                        mean_cost: c / k,
                    },
                )
            })
            .collect(),
        routing_distribution: d
            .pool
            .names()
            .iter()
            .zip(&counts)
            .map(|(name, &c)| ModelShare {
                model: name.clone(),
                fraction: c as f64 / n,
            })
            .collect(),
    })
}

/// Fills `realized_quality` and `realized_cost` from the labels in `d`.
pub fn realize(decisions: &mut [RouterDecision], d: &Dataset) -> Result<()> {
    let index: HashMap<&str, &PromptRecord> = d.records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    for dec in decisions {
        let r = index
            .get(dec.sample_id.as_str())
            .ok_or_else(|| Error::MissingId(dec.sample_id.clone()))?;
        dec.realized_quality = Some(r.quality[dec.chosen_index]);
        dec.realized_cost = Some(r.cost[dec.chosen_index]);
    }
    Ok(())
}

/// Aligned text table with one row per named report: Quality, total Cost,
/// Efficiency, Cost Ratio and Quality Gap.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let header = ["Method", "Quality", "Cost ($)", "Efficiency", "Cost Ratio", "Quality Gap"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                format!("{:.3}", r.quality),
                format!("{:.3}", r.total_cost),
                format!("{:.1}%", r.efficiency * 100.0),
                format!("{:.2}x", r.cost_ratio),
                format!("{:.1}%", r.quality_gap * 100.0),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        for (i, (c, w)) in row.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in &cells {
        line(&mut out, row);
    }
    out
}

/// Attribution of one input block to the chosen model's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub name: String,
    pub score: f64,
}

/// Leave-one-group-out attribution.
///
/// For each feature group, the group's entries are replaced by the training
/// means stored in the checkpoint and the drop in the chosen model's score is
/// recorded. The text branch is reported as `text`, measured by zeroing the
/// embedding. Results are sorted by descending attribution.
pub fn explain_route(
    params: &RankerParams,
    x_j: &FeatureVector,
    x_t: &EmbeddingVector,
    schema: &FeatureSchema,
) -> Result<Vec<Attribution>> {
    if schema.fingerprint() != params.schema_fingerprint || schema.version != params.feature_schema_version {
        return Err(Error::FingerprintMismatch(
            "feature schema differs from the one the checkpoint was trained with".into(),
        ));
    }
    let base = single_row(params, x_j, x_t)?;
    let chosen = choose(&base);
    let mut out = Vec::new();
    for group in FeatureGroup::ALL {
        let idx = schema.group_indices(group);
        if idx.is_empty() {
            continue;
        }
        let mut masked = x_j.clone();
        for i in idx {
            masked.values[i] = params.feature_baseline[i];
        }
        let s = single_row(params, &masked, x_t)?;
        out.push(Attribution {
            name: group.as_str().to_string(),
            score: base[chosen] - s[chosen],
        });
    }
    let zero_text = EmbeddingVector {
        values: vec![0.0; x_t.dim()],
    };
    let s = single_row(params, x_j, &zero_text)?;
    out.push(Attribution {
        name: "text".to_string(),
        score: base[chosen] - s[chosen],
    });
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// One policy's point on the cost-quality frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub policy: String,
    /// `None` for the λ-free oracle and fixed-model baselines.
    pub lambda: Option<f64>,
    pub quality: f64,
    pub mean_cost: f64,
    pub total_cost: f64,
    pub utility: f64,
    pub efficiency: f64,
    pub cost_ratio: f64,
}

impl FrontierRow {
    fn from_report(policy: impl Into<String>, lambda: Option<f64>, r: &EvalReport) -> Self {
        Self {
            policy: policy.into(),
            lambda,
            quality: r.quality,
            mean_cost: r.mean_cost,
            total_cost: r.total_cost,
            utility: r.utility,
            efficiency: r.efficiency,
            cost_ratio: r.cost_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierTable {
    pub rows: Vec<FrontierRow>,
}

impl FrontierTable {
    pub const CSV_HEADER: &'static str = "lambda,quality,mean_cost,total_cost,utility,efficiency,cost_ratio";

    /// Router rows carry their λ; oracle and baseline rows carry the policy
    /// name in the `lambda` column, with utility evaluated at λ = 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let lambda = r.lambda.map_or_else(|| r.policy.clone(), |l| format!("{l}"));
            let _ = writeln!(
                out,
                "{lambda},{},{},{},{},{},{}",
                r.quality, r.mean_cost, r.total_cost, r.utility, r.efficiency, r.cost_ratio
            );
        }
        out
    }

    pub fn router_rows(&self) -> impl Iterator<Item = &FrontierRow> {
        self.rows.iter().filter(|r| r.lambda.is_some())
    }

    pub fn row(&self, policy: &str) -> Option<&FrontierRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

/// Output of [`sweep_lambda`]: the table plus every trained router and its log.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub table: FrontierTable,
    pub routers: Vec<(f64, RankerParams, TrainingLog)>,
}

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.0, 1e3, 1e5];

/// Trains one router per λ with otherwise identical settings, evaluates each on
/// `test`, and appends oracle, best-single and cheapest rows.
pub fn sweep_lambda(
    train: &PreparedSplit,
    val: &PreparedSplit,
    test: &PreparedSplit,
    schema: &FeatureSchema,
    lambdas: &[f64],
    config: &TrainConfig,
) -> Result<SweepResult> {
    let mut rows = Vec::new();
    let mut routers = Vec::new();
    for &lambda in lambdas {
        let cfg = TrainConfig {
            lambda,
            ..config.clone()
        };
        let (params, log) = train_router(train, val, schema, &cfg)?;
        let report = evaluate(&route_split(&params, test)?, &test.dataset, lambda)?;
        rows.push(FrontierRow::from_report(format!("router@{lambda}"), Some(lambda), &report));
        routers.push((lambda, params, log));
    }
    let d = &test.dataset;
    for (name, decisions) in [
        ("oracle", oracle_decisions(d)),
        ("best_single", baseline_best_single(d)),
        ("cheapest", baseline_cheapest(d)),
    ] {
        rows.push(FrontierRow::from_report(name, None, &evaluate(&decisions, d, 0.0)?));
    }
    Ok(SweepResult {
        table: FrontierTable { rows },
        routers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ModelPool;

    fn rec(id: &str, bench: &str, q: &[f64], c: &[f64]) -> PromptRecord {
        PromptRecord {
            sample_id: id.into(),
            prompt: format!("prompt {id}"),
            benchmark: bench.into(),
            quality: q.to_vec(),
            cost: c.to_vec(),
            language: "en".into(),
        }
    }

    fn pool(m: usize) -> ModelPool {
        ModelPool::new((0..m).map(|i| format!("m{i}"))).unwrap()
    }

    #[test]
    fn choose_argmax_and_ties() {
        assert_eq!(choose(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(choose(&[0.5, 0.5]), 0);
        assert_eq!(choose(&[0.1 + 7.0, 0.9 + 7.0, 0.3 + 7.0]), 1);
    }

    #[test]
    fn oracle_prefers_cheapest_among_best() {
        assert_eq!(oracle_route(&rec("a", "b", &[1.0, 1.0, 0.5], &[0.002, 0.001, 0.0001])), 1);
        assert_eq!(oracle_route(&rec("a", "b", &[0.5, 0.5, 0.5], &[0.1, 0.1, 0.1])), 0);
        assert_eq!(oracle_route(&rec("a", "b", &[0.0, 0.0], &[0.2, 0.1])), 1);
    }

    #[test]
    fn baselines_and_their_ties() {
        let d = Dataset::new(
            pool(2),
            vec![
                rec("a", "x", &[1.0, 0.0], &[0.1, 0.1]),
                rec("b", "x", &[0.5, 1.0], &[0.1, 0.1]),
            ],
            "t",
        )
        .unwrap();
        // mean quality tie and cost tie → index 0
        assert!(baseline_best_single(&d).iter().all(|x| x.chosen_index == 0));
        assert!(baseline_cheapest(&d).iter().all(|x| x.chosen_index == 0));

        let d = Dataset::new(
            pool(3),
            vec![
                rec("a", "x", &[0.9, 0.2, 0.1], &[0.3, 0.2, 0.1]),
                rec("b", "x", &[0.8, 0.9, 0.0], &[0.3, 0.2, 0.1]),
            ],
            "t",
        )
        .unwrap();
        assert_eq!(best_single_model(&d), 0);
        assert_eq!(cheapest_model(&d), 2);
        let cheap = evaluate(&baseline_cheapest(&d), &d, 0.0).unwrap();
        for j in 0..3 {
            let fixed = evaluate(&fixed_decisions(&d, j), &d, 0.0).unwrap();
            assert!(cheap.total_cost <= fixed.total_cost);
        }
    }

    #[test]
    fn oracle_copy_has_unit_ratios() {
        let d = Dataset::new(
            pool(3),
            vec![
                rec("a", "x", &[1.0, 0.0, 1.0], &[0.3, 0.2, 0.1]),
                rec("b", "y", &[0.2, 0.9, 0.0], &[0.3, 0.2, 0.1]),
            ],
            "t",
        )
        .unwrap();
        let r = evaluate(&oracle_decisions(&d), &d, 1e3).unwrap();
        assert_eq!(r.efficiency, 1.0);
        assert_eq!(r.cost_ratio, 1.0);
        assert_eq!(r.quality_gap, 0.0);
    }

    #[test]
    fn coverage_errors() {
        let d = Dataset::new(pool(2), vec![rec("a", "x", &[1.0, 0.0], &[0.1, 0.1])], "t").unwrap();
        assert!(matches!(evaluate(&[], &d, 0.0), Err(Error::MissingId(_))));
        let twice = vec![RouterDecision::new("a", 0), RouterDecision::new("a", 1)];
        assert!(matches!(evaluate(&twice, &d, 0.0), Err(Error::DuplicateId(_))));
        let stranger = vec![RouterDecision::new("a", 0), RouterDecision::new("z", 1)];
        assert!(evaluate(&stranger, &d, 0.0).is_err());
        assert!(evaluate(&[RouterDecision::new("a", 5)], &d, 0.0).is_err());
    }

    #[test]
    fn table_has_expected_columns() {
        let d = Dataset::new(pool(2), vec![rec("a", "x", &[1.0, 0.0], &[0.1, 0.1])], "t").unwrap();
        let r = evaluate(&oracle_decisions(&d), &d, 0.0).unwrap();
        let table = render_table(&[("Oracle".to_string(), &r)]);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("Method"));
        assert!(lines[0].contains("Cost Ratio"));
        assert!(lines[2].contains("100.0%"));
        assert!(lines[2].contains("1.00x"));
    }

    #[test]
    fn frontier_csv_layout() {
        let row = |policy: &str, lambda| FrontierRow {
            policy: policy.into(),
            lambda,
            quality: 0.5,
            mean_cost: 0.25,
            total_cost: 1.0,
            utility: 0.5,
            efficiency: 1.0,
            cost_ratio: 2.0,
        };
        let t = FrontierTable {
            rows: vec![row("router@1000", Some(1e3)), row("oracle", None)],
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "lambda,quality,mean_cost,total_cost,utility,efficiency,cost_ratio");
        assert_eq!(lines[1], "1000,0.5,0.25,1,0.5,1,2");
        assert_eq!(lines[2], "oracle,0.5,0.25,1,0.5,1,2");
    }
}
