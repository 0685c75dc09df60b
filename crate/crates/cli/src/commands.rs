use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use llmrank::dataset::{filter_dataset, ingest_dataset, ingest_lenient, stratified_split, write_rejects, FilterSpec};
use llmrank::features::{extract_features, featurize_dataset, train_proxy, FeatureMatrix, FeatureSchema, ProxyModel};
use llmrank::pipeline::{train_router, PreparedSplit};
use llmrank::routing::{
    self, baseline_best_single, baseline_cheapest, baseline_random, evaluate, explain_route, oracle_decisions, realize,
    render_table, route, route_split, sweep_lambda, EvalReport, FrontierTable, RouterDecision, DEFAULT_LAMBDAS,
};
use llmrank::synthetic::KeywordCorpus;
use llmrank::{Dataset, EmbeddingProvider, EmbeddingStore, HashEmbedder, ModelPool, RankerParams, StratifyBy};
use serde::{Deserialize, Serialize};

use crate::config::{parse_lambdas, write_json, RunConfig};
use crate::{
    Command, EmbeddingArgs, EvaluateArgs, FeaturizeArgs, Format, HyperArgs, IngestArgs, Policy, RouteArgs, SplitArgs,
    Stratify, SweepArgs, SynthArgs, TrainArgs,
};

const SPLITS: [&str; 3] = ["train", "val", "test"];
const DEFAULT_HASH_DIM: usize = 256;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Route(a) => route_cmd(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// `--pool` when given, otherwise `pool.json` next to the data file, or inside
/// it when `data` is a directory.
fn resolve_pool(data: &Path, pool: Option<&Path>) -> Result<ModelPool> {
    let path = match pool {
        Some(p) => p.to_path_buf(),
        None if data.is_dir() => data.join("pool.json"),
        None => sibling(data, "pool.json"),
    };
    Ok(ModelPool::load(&path)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = KeywordCorpus::new(a.n, a.seed).generate()?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    d.write_jsonl(&a.out)?;
    d.pool.save(sibling(&a.out, "pool.json"))?;
    log::info!("wrote {} synthetic records to {}", d.len(), a.out.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let pool = resolve_pool(&a.data, a.pool.as_deref())?;
    let (raw, rejects) = ingest_lenient(&a.data, &pool)?;
    let d = if a.no_filter {
        raw
    } else {
        let spec = FilterSpec {
            min_category_samples: a.min_category_samples,
            ..FilterSpec::default()
        };
        filter_dataset(&raw, &spec)?
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    d.write_jsonl(&a.out)?;
    d.pool.save(sibling(&a.out, "pool.json"))?;
    let mut rejects_path = a.out.clone().into_os_string();
    rejects_path.push(".rejects");
    write_rejects(PathBuf::from(rejects_path), &rejects)?;
    log::info!("kept {} records, rejected {} lines", d.len(), rejects.len());
    for (category, n) in d.category_counts() {
        log::info!("  {category}: {n}");
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(data) = a.data {
        cfg.data = Some(data);
    }
    if let Some(pool) = a.pool {
        cfg.pool = Some(pool);
    }
    if let Some(seed) = a.seed {
        cfg.split.seed = seed;
    }
    if let Some(s) = a.stratify {
        cfg.split.stratify_by = match s {
            Stratify::Benchmark => StratifyBy::Benchmark,
            Stratify::Language => StratifyBy::Language,
        };
    }
    let data = cfg.data.clone().ok_or_else(|| anyhow!("--data is required"))?;
    let pool = resolve_pool(&data, cfg.pool.as_deref())?;
    let d = ingest_dataset(&data, &pool)?;
    let splits = stratified_split(&d, &cfg.split)?;
    create_dir(&a.out)?;
    for (name, part) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        part.write_jsonl(a.out.join(format!("{name}.jsonl")))?;
        log::info!("{name}: {} records", part.len());
    }
    pool.save(a.out.join("pool.json"))?;
    cfg.record_input(&data)?;
    cfg.save(&a.out)
}

fn load_split(dir: &Path, name: &str, pool: &ModelPool) -> Result<Dataset> {
    Ok(ingest_dataset(dir.join(format!("{name}.jsonl")), pool)?)
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let pool = resolve_pool(&a.data, None)?;
    let out = a.out.unwrap_or_else(|| a.data.clone());
    create_dir(&out)?;
    let train = load_split(&a.data, "train", &pool)?;
    let proxy = if a.no_proxy {
        None
    } else {
        Some(train_proxy(&train, a.proxy_hash_dim, a.proxy_epochs)?)
    };
    let categories: Vec<String> = proxy.as_ref().map(|p| p.category_names.clone()).unwrap_or_default();
    let schema = FeatureSchema::v1(&categories)?;
    schema.save(out.join("schema.json"))?;
    if let Some(p) = &proxy {
        p.save(out.join("proxy.json"))?;
    }
    for name in SPLITS {
        let d = if name == "train" { train.clone() } else { load_split(&a.data, name, &pool)? };
        let (matrix, manifest) = featurize_dataset(&d, &schema, proxy.as_ref())?;
        matrix.save(out.join(format!("{name}.feat")))?;
        write_json(&out.join(format!("{name}.feat.manifest.json")), &manifest)?;
        log::info!("{name}: {} x {} features", matrix.len(), matrix.dim());
    }
    Ok(())
}

/// Schema, optional proxy and per-split features for a split directory:
/// read from `featurize` output when present, computed otherwise.
struct FeatureSource {
    schema: FeatureSchema,
    proxy: Option<ProxyModel>,
    precomputed: bool,
}

impl FeatureSource {
    fn resolve(dir: &Path, train: &Dataset) -> Result<Self> {
        let schema_path = dir.join("schema.json");
        if schema_path.exists() {
            let schema = FeatureSchema::load(&schema_path)?;
            let proxy_path = dir.join("proxy.json");
            let proxy = if proxy_path.exists() { Some(ProxyModel::load(&proxy_path)?) } else { None };
            let precomputed = SPLITS.iter().all(|s| dir.join(format!("{s}.feat")).exists());
            return Ok(Self {
                schema,
                proxy,
                precomputed,
            });
        }
        log::info!("no features in {}; fitting the proxy classifier on the training split", dir.display());
        let proxy = train_proxy(train, 4096, 50)?;
        Ok(Self {
            schema: FeatureSchema::v1(&proxy.category_names)?,
            proxy: Some(proxy),
            precomputed: false,
        })
    }

    fn prepare(&self, dir: &Path, name: &str, d: &Dataset, provider: &dyn EmbeddingProvider) -> Result<PreparedSplit> {
        if self.precomputed {
            let features = FeatureMatrix::load(dir.join(format!("{name}.feat")))?;
            if features.dim() != self.schema.dim() {
                bail!("{name}.feat has {} columns, schema has {}", features.dim(), self.schema.dim());
            }
            Ok(PreparedSplit::with_features(d, &features, provider)?)
        } else {
            Ok(PreparedSplit::build(d, &self.schema, self.proxy.as_ref(), provider)?)
        }
    }
}

/// How the text branch gets its vectors; stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelInfo {
    embedding: String,
    embedding_dim: usize,
    lambda: f64,
}

fn provider(args: &EmbeddingArgs, cfg: &mut RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    if let Some(p) = &args.embeddings {
        cfg.embeddings = Some(p.clone());
    }
    if let Some(h) = args.hash_dim {
        cfg.hash_dim = Some(h);
    }
    match (&cfg.embeddings, cfg.hash_dim) {
        (Some(_), Some(_)) => bail!("pass either --embeddings or --hash-dim, not both"),
        (Some(path), None) => {
            let path = path.clone();
            cfg.record_input(&path)?;
            Ok(Box::new(EmbeddingStore::load(&path)?))
        }
        (None, dim) => {
            cfg.hash_dim = Some(dim.unwrap_or(DEFAULT_HASH_DIM));
            Ok(Box::new(HashEmbedder::new(cfg.hash_dim.unwrap())?))
        }
    }
}

/// Provider for an already-trained model: an explicit `--embeddings` file
/// wins, otherwise the hash embedder recorded at training time.
fn model_provider(info: &ModelInfo, args: &EmbeddingArgs) -> Result<Box<dyn EmbeddingProvider>> {
    if let Some(path) = &args.embeddings {
        return Ok(Box::new(EmbeddingStore::load(path)?));
    }
    match info.embedding.strip_prefix("hash:").and_then(|d| d.parse::<usize>().ok()) {
        Some(dim) => Ok(Box::new(HashEmbedder::new(dim)?)),
        None => bail!("model was trained on embeddings {:?}; pass --embeddings", info.embedding),
    }
}

fn apply_hyper(h: &HyperArgs, cfg: &mut RunConfig) {
    let t = &mut cfg.train;
    if let Some(v) = h.lambda {
        t.lambda = v;
    }
    if let Some(v) = h.seed {
        t.seed = v;
    }
    if let Some(v) = h.epochs {
        t.epochs = v;
    }
    if let Some(v) = h.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = h.patience {
        t.patience = v;
    }
    if let Some(v) = h.lr {
        t.lr = v;
    }
    if let Some(v) = h.hidden {
        t.hidden = v;
    }
    if let Some(v) = h.dropout {
        t.dropout = v;
    }
}

struct Prepared {
    pool: ModelPool,
    source: FeatureSource,
    provider: Box<dyn EmbeddingProvider>,
    splits: Vec<PreparedSplit>,
}

fn prepare_dir(
    data: Option<PathBuf>,
    embedding: &EmbeddingArgs,
    hyper: &HyperArgs,
    cfg: &mut RunConfig,
) -> Result<Prepared> {
    if let Some(d) = data {
        cfg.data = Some(d);
    }
    apply_hyper(hyper, cfg);
    cfg.train.validate()?;
    let dir = cfg.data.clone().ok_or_else(|| anyhow!("--data is required"))?;
    let pool = resolve_pool(&dir, cfg.pool.as_deref())?;
    let provider = provider(embedding, cfg)?;
    let datasets: Vec<Dataset> = SPLITS.iter().map(|s| load_split(&dir, s, &pool)).collect::<Result<_>>()?;
    for s in SPLITS {
        cfg.record_input(&dir.join(format!("{s}.jsonl")))?;
    }
    let source = FeatureSource::resolve(&dir, &datasets[0])?;
    let splits = SPLITS
        .iter()
        .zip(&datasets)
        .map(|(name, d)| source.prepare(&dir, name, d, provider.as_ref()))
        .collect::<Result<_>>()?;
    Ok(Prepared {
        pool,
        source,
        provider,
        splits,
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let p = prepare_dir(a.data, &a.embedding, &a.hyper, &mut cfg)?;
    let (params, log) = train_router(&p.splits[0], &p.splits[1], &p.source.schema, &cfg.train)?;
    log::info!(
        "stopped after {} epochs ({:?}), best epoch {}",
        log.stopped_epoch,
        log.stop_reason,
        log.best_epoch
    );

    create_dir(&a.out)?;
    params.save(a.out.join("checkpoint.bin"))?;
    write_json(&a.out.join("training_log.json"), &log)?;
    p.source.schema.save(a.out.join("schema.json"))?;
    if let Some(proxy) = &p.source.proxy {
        proxy.save(a.out.join("proxy.json"))?;
    }
    p.pool.save(a.out.join("pool.json"))?;
    let info = ModelInfo {
        embedding: p.provider.tag(),
        embedding_dim: p.provider.dim(),
        lambda: cfg.train.lambda,
    };
    write_json(&a.out.join("model.json"), &info)?;
    cfg.save(&a.out)
}

/// Everything a trained model directory holds.
struct Model {
    params: RankerParams,
    schema: FeatureSchema,
    proxy: Option<ProxyModel>,
    pool: ModelPool,
    info: ModelInfo,
}

impl Model {
    fn load(dir: &Path) -> Result<Self> {
        let params = RankerParams::load(dir.join("checkpoint.bin"))?;
        let schema = FeatureSchema::load(dir.join("schema.json"))?;
        let proxy_path = dir.join("proxy.json");
        let proxy = if proxy_path.exists() { Some(ProxyModel::load(&proxy_path)?) } else { None };
        let pool = ModelPool::load(dir.join("pool.json"))?;
        let text = fs::read_to_string(dir.join("model.json")).with_context(|| format!("reading {}/model.json", dir.display()))?;
        let info: ModelInfo = serde_json::from_str(&text).context("parsing model.json")?;
        params.check_compatible(&schema.fingerprint(), &pool.fingerprint(), info.embedding_dim)?;
        Ok(Self {
            params,
            schema,
            proxy,
            pool,
            info,
        })
    }

    fn provider(&self, args: &EmbeddingArgs) -> Result<Box<dyn EmbeddingProvider>> {
        let p = model_provider(&self.info, args)?;
        self.params
            .check_compatible(&self.schema.fingerprint(), &self.pool.fingerprint(), p.dim())?;
        Ok(p)
    }
}

fn read_decisions(path: &Path) -> Result<Vec<RouterDecision>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: RouterDecision = serde_json::from_str(&line)
            .map_err(|e| llmrank::Error::BadRecord {
                line: i + 1,
                reason: e.to_string(),
            })
            .with_context(|| format!("in {}", path.display()))?;
        out.push(d);
    }
    Ok(out)
}

fn write_decisions(path: &Path, decisions: &[RouterDecision]) -> Result<()> {
    let mut text = String::new();
    for d in decisions {
        text.push_str(&serde_json::to_string(d)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn single_row_table(label: &str, r: &EvalReport, oracle: &EvalReport) -> FrontierTable {
    let row = |policy: &str, lambda: Option<f64>, r: &EvalReport| routing::FrontierRow {
        policy: policy.to_string(),
        lambda,
        quality: r.quality,
        mean_cost: r.mean_cost,
        total_cost: r.total_cost,
        utility: r.utility,
        efficiency: r.efficiency,
        cost_ratio: r.cost_ratio,
    };
    FrontierTable {
        rows: vec![row(label, Some(r.lambda), r), row("oracle", None, oracle)],
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let data_path = if a.data.is_dir() { a.data.join("test.jsonl") } else { a.data.clone() };
    let (label, decisions, d, lambda) = if let Some(dir) = &a.model {
        let model = Model::load(dir)?;
        let pool = match &a.pool {
            Some(p) => ModelPool::load(p)?,
            None => model.pool.clone(),
        };
        if pool.fingerprint() != model.pool.fingerprint() {
            return Err(llmrank::Error::FingerprintMismatch("dataset pool differs from the model's pool".into()).into());
        }
        let d = ingest_dataset(&data_path, &pool)?;
        let provider = model.provider(&a.embedding)?;
        let split = PreparedSplit::build(&d, &model.schema, model.proxy.as_ref(), provider.as_ref())?;
        let decisions = route_split(&model.params, &split)?;
        ("router".to_string(), decisions, d, a.lambda.unwrap_or(model.info.lambda))
    } else {
        let pool = resolve_pool(&a.data, a.pool.as_deref())?;
        let d = ingest_dataset(&data_path, &pool)?;
        let (label, decisions) = match (a.policy, &a.decisions) {
            (Some(Policy::Oracle), _) => ("oracle".to_string(), oracle_decisions(&d)),
            (Some(Policy::BestSingle), _) => ("best_single".to_string(), baseline_best_single(&d)),
            (Some(Policy::Cheapest), _) => ("cheapest".to_string(), baseline_cheapest(&d)),
            (Some(Policy::Random), _) => ("random".to_string(), baseline_random(&d, a.seed)),
            (None, Some(path)) => ("decisions".to_string(), read_decisions(path)?),
            (None, None) => bail!("pass one of --model, --policy or --decisions"),
        };
        (label, decisions, d, a.lambda.unwrap_or(0.0))
    };

    let report = evaluate(&decisions, &d, lambda)?;
    if let Some(out) = &a.out {
        let mut realized = decisions;
        realize(&mut realized, &d)?;
        write_decisions(out, &realized)?;
    }
    let oracle = evaluate(&oracle_decisions(&d), &d, lambda)?;
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Table => render_table(&[(label, &report), ("oracle".to_string(), &oracle)]),
        Format::Csv => single_row_table(&label, &report, &oracle).to_csv(),
    };
    print!("{text}");
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RouteInput {
    #[serde(default)]
    sample_id: Option<String>,
    prompt: String,
}

#[derive(Debug, Serialize)]
struct RouteOutput {
    sample_id: String,
    model: String,
    chosen_index: usize,
    scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attribution: Option<Vec<routing::Attribution>>,
}

fn route_cmd(a: RouteArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let provider = model.provider(&a.embedding)?;
    let reader: Box<dyn BufRead> = match &a.input {
        Some(path) => Box::new(BufReader::new(
            fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
        )),
        None => Box::new(BufReader::new(std::io::stdin())),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, line) in reader.lines().enumerate() {
        let line = line.context("reading prompts")?;
        if line.trim().is_empty() {
            continue;
        }
        let input = match serde_json::from_str::<RouteInput>(&line) {
            Ok(r) => r,
            Err(_) if !line.trim_start().starts_with('{') => RouteInput {
                sample_id: None,
                prompt: line.clone(),
            },
            Err(e) => {
                return Err(llmrank::Error::BadRecord {
                    line: i + 1,
                    reason: e.to_string(),
                }
                .into())
            }
        };
        let id = input.sample_id.unwrap_or_else(|| format!("line-{}", i + 1));
        let x_j = extract_features(&input.prompt, &model.schema, model.proxy.as_ref())
            .map_err(|e| llmrank::Error::in_record(&id, e))?;
        let x_t = provider.embed(&id, &input.prompt)?;
        let decision = route(&model.params, &id, &x_j, &x_t)?;
        let attribution = if a.explain {
            Some(explain_route(&model.params, &x_j, &x_t, &model.schema)?)
        } else {
            None
        };
        let record = RouteOutput {
            model: model.pool.name(decision.chosen_index).to_string(),
            sample_id: decision.sample_id,
            chosen_index: decision.chosen_index,
            scores: decision.scores,
            attribution,
        };
        writeln!(out, "{}", serde_json::to_string(&record)?).context("writing decision")?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(l) = &a.lambdas {
        cfg.lambdas = parse_lambdas(l)?;
    }
    if cfg.lambdas.is_empty() {
        cfg.lambdas = DEFAULT_LAMBDAS.to_vec();
    }
    let p = prepare_dir(a.data, &a.embedding, &a.hyper, &mut cfg)?;
    let result = sweep_lambda(&p.splits[0], &p.splits[1], &p.splits[2], &p.source.schema, &cfg.lambdas, &cfg.train)?;
    let text = match a.format {
        Format::Csv => result.table.to_csv(),
        Format::Json => serde_json::to_string_pretty(&result.table)? + "\n",
        Format::Table => {
            let d = &p.splits[2].dataset;
            let mut reports = Vec::new();
            for (lambda, params, _) in &result.routers {
                reports.push((format!("router (lambda={lambda})"), evaluate(&route_split(params, &p.splits[2])?, d, *lambda)?));
            }
            reports.push(("oracle".into(), evaluate(&oracle_decisions(d), d, 0.0)?));
            reports.push(("best_single".into(), evaluate(&baseline_best_single(d), d, 0.0)?));
            reports.push(("cheapest".into(), evaluate(&baseline_cheapest(d), d, 0.0)?));
            let rows: Vec<(String, &EvalReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
            render_table(&rows)
        }
    };
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(dir)?;
                cfg.save(dir)?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
