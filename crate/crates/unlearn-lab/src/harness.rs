//! Experiment orchestration: the fine-tune, snapshot, unlearn, evaluate
//! pipeline, with per-seed output directories, checkpoint caching, and CSV
//! report emission.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! cache/ft-<hash>.json        fine-tuned checkpoints, keyed by content hash
//! cache/baseline-<hash>.json  baseline reports for those checkpoints
//! seed-<s>/run.json           deterministic run record (config echo included)
//! seed-<s>/meta.json          wall time (everything nondeterministic)
//! seed-<s>/schedule.jsonl     the pairing schedule that was executed
//! seed-<s>/telemetry.jsonl    per-optimizer-step loss breakdown
//! seed-<s>/unlearned.model.json
//! seed-<s>/per_entity.csv     post-unlearning per-entity breakdown
//! seed-<s>/results.csv        one summary row for this run
//! summary.csv, per_entity.csv seed-averaged grids (emit_report)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, CompositionMode, CorpusBundle, RetainComposition};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, AggregateReport, EvalOptions};
use crate::objectives::{unlearn_run, StepTelemetry, UnlearnConfig, UnlearnMethod};
use crate::rng::SplitMix64;
use crate::scheduler::{build_schedule, PairSchedule, SamplingStrategy, StrategyKind};
use crate::seqmodel::{
    finetune, load_model, model_from_json, model_to_json, save_model, tokenize, FinetuneConfig,
    ModelConfig, ModelState, TokenSeq, Vocabulary,
};

/// Architecture settings without the corpus-derived vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 48,
        }
    }
}

impl ModelSettings {
    pub fn to_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            seed,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One experiment: a corpus, a retain composition, a sampling strategy, an
/// unlearning method, and the seeds to repeat it over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_composition")]
    pub composition: CompositionMode,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    #[serde(default = "default_unlearn")]
    pub unlearn: UnlearnConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_composition() -> CompositionMode {
    CompositionMode::Full
}

fn default_strategy() -> StrategyKind {
    StrategyKind::Melu
}

fn default_unlearn() -> UnlearnConfig {
    UnlearnConfig::new(UnlearnMethod::Gd)
}

impl ExperimentConfig {
    pub fn new<P: Into<PathBuf>, Q: Into<PathBuf>>(corpus_path: P, output_dir: Q) -> Self {
        Self {
            corpus_path: corpus_path.into(),
            output_dir: output_dir.into(),
            composition: default_composition(),
            strategy: default_strategy(),
            unlearn: default_unlearn(),
            model: ModelSettings::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalOptions::default(),
            seeds: default_seeds(),
        }
    }

    pub fn from_json_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !self.corpus_path.exists() {
            return Err(Error::Config(format!(
                "corpus path {} does not exist",
                self.corpus_path.display()
            )));
        }
        self.unlearn.validate()
    }
}

/// Sub-seeds derived from one run seed, echoed for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub model: u64,
    pub finetune: u64,
    pub composition: u64,
    pub strategy: u64,
    pub unlearn: u64,
}

pub fn derive_seed(run_seed: u64, role: &str) -> u64 {
    SplitMix64::keyed(run_seed, role).next_u64()
}

impl DerivedSeeds {
    pub fn for_run(run_seed: u64) -> Self {
        Self {
            model: derive_seed(run_seed, "model-init"),
            finetune: derive_seed(run_seed, "finetune"),
            composition: derive_seed(run_seed, "composition"),
            strategy: derive_seed(run_seed, "strategy"),
            unlearn: derive_seed(run_seed, "unlearn"),
        }
    }
}

/// Full effective configuration of one seed's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRunConfig {
    pub experiment: ExperimentConfig,
    pub run_seed: u64,
    pub derived_seeds: DerivedSeeds,
}

/// Everything one run produced. `wall_time_secs` lives in `meta.json`, not
/// in the deterministic `run.json` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config: ResolvedRunConfig,
    pub baseline: AggregateReport,
    #[serde(rename = "final")]
    pub final_report: AggregateReport,
    pub telemetry_path: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn method(&self) -> UnlearnMethod {
        self.config.experiment.unlearn.method
    }

    pub fn strategy(&self) -> StrategyKind {
        self.config.experiment.strategy
    }

    pub fn composition(&self) -> CompositionMode {
        self.config.experiment.composition
    }
}

fn hash_of(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Tokenize the full corpus (forget + retain + test) for fine-tuning.
fn finetune_data(
    model: &ModelState,
    corpus: &CorpusBundle,
    eval: &EvalOptions,
) -> Result<Vec<TokenSeq>> {
    corpus
        .all_pairs()
        .map(|p| tokenize(&model.vocab, p, eval.unk_policy, model.config.max_seq_len))
        .collect()
}

/// Fine-tuned model plus its baseline report, cached under
/// `output_dir/cache` by a content hash of everything that shapes them.
pub struct PreparedModel {
    pub model: ModelState,
    pub baseline: AggregateReport,
    pub checkpoint_path: PathBuf,
}

pub fn prepare_finetuned_model(
    cfg: &ExperimentConfig,
    corpus_bytes: &[u8],
    corpus: &CorpusBundle,
    run_seed: u64,
) -> Result<PreparedModel> {
    let seeds = DerivedSeeds::for_run(run_seed);
    let refusals: Vec<&str> = cfg
        .unlearn
        .refusal_phrases
        .iter()
        .map(String::as_str)
        .collect();
    let vocab = Vocabulary::from_corpus(corpus, &refusals);
    let model_cfg = cfg.model.to_config(vocab.len(), seeds.model);
    let mut ft_cfg = cfg.finetune.clone();
    ft_cfg.seed = seeds.finetune;

    let ft_key = hash_of(&[
        corpus_bytes,
        serde_json::to_string(&model_cfg)?.as_bytes(),
        serde_json::to_string(&ft_cfg)?.as_bytes(),
    ]);
    let baseline_key = hash_of(&[
        ft_key.as_bytes(),
        serde_json::to_string(&cfg.eval)?.as_bytes(),
    ]);
    let cache_dir = cfg.output_dir.join("cache");
    std::fs::create_dir_all(&cache_dir)?;
    let ckpt_path = cache_dir.join(format!("ft-{ft_key}.json"));
    let baseline_path = cache_dir.join(format!("baseline-{baseline_key}.json"));

    let model = if ckpt_path.exists() {
        load_model(&ckpt_path).map_err(|e| e.in_stage("finetune-cache"))?
    } else {
        let init = ModelState::init(model_cfg, vocab).map_err(|e| e.in_stage("model-init"))?;
        let data = finetune_data(&init, corpus, &cfg.eval).map_err(|e| e.in_stage("tokenize"))?;
        let trained = finetune(&init, &data, &ft_cfg).map_err(|e| e.in_stage("finetune"))?;
        save_model(&trained, &ckpt_path)?;
        trained
    };

    // The baseline is computed once per fine-tuned model and reused by
    // every strategy/method run that shares it.
    let baseline: AggregateReport = if baseline_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(&baseline_path)?)?
    } else {
        let report =
            evaluate_model(&model, corpus, &cfg.eval).map_err(|e| e.in_stage("baseline-eval"))?;
        std::fs::write(&baseline_path, serde_json::to_string(&report)?)?;
        report
    };

    Ok(PreparedModel {
        model,
        baseline,
        checkpoint_path: ckpt_path,
    })
}

/// Run the full pipeline for every seed in the config, then write the
/// seed-averaged summary files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate().map_err(|e| e.in_stage("startup"))?;
    let corpus_bytes = std::fs::read(&cfg.corpus_path)?;
    let corpus = load_corpus(&cfg.corpus_path).map_err(|e| e.in_stage("load-corpus"))?;
    std::fs::create_dir_all(&cfg.output_dir)?;

    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        results.push(run_single_seed(cfg, &corpus_bytes, &corpus, seed)?);
    }
    emit_report(&results, &cfg.output_dir)?;
    Ok(results)
}

/// One seed's fine-tune, unlearn, evaluate, persist pass.
pub fn run_single_seed(
    cfg: &ExperimentConfig,
    corpus_bytes: &[u8],
    corpus: &CorpusBundle,
    run_seed: u64,
) -> Result<RunResult> {
    let started = Instant::now();
    let seeds = DerivedSeeds::for_run(run_seed);
    let run_id = format!("seed-{run_seed}");
    let run_dir = cfg.output_dir.join(&run_id);
    std::fs::create_dir_all(&run_dir)?;
    let marker = run_dir.join("INCOMPLETE");
    std::fs::write(&marker, "run in progress or aborted\n")?;

    let prepared = prepare_finetuned_model(cfg, corpus_bytes, corpus, run_seed)?;

    let composed = crate::corpus::compose_retain(
        corpus,
        RetainComposition {
            mode: cfg.composition,
            seed: seeds.composition,
        },
    )
    .map_err(|e| e.in_stage("compose-retain"))?;

    let mut unlearn_cfg = cfg.unlearn.clone();
    unlearn_cfg.seed = seeds.unlearn;
    let schedule = build_schedule(
        SamplingStrategy {
            kind: cfg.strategy,
            seed: seeds.strategy,
        },
        corpus.forget(),
        &composed,
        unlearn_cfg.epochs,
    )
    .map_err(|e| e.in_stage("build-schedule"))?;
    write_schedule(&schedule, &run_dir.join("schedule.jsonl"))?;

    let outcome = unlearn_run(&prepared.model, &schedule, corpus, &unlearn_cfg)
        .map_err(|e| e.in_stage("unlearn"))?;
    write_telemetry(&outcome.telemetry, &run_dir.join("telemetry.jsonl"))?;
    save_model(&outcome.model, run_dir.join("unlearned.model.json"))?;

    let final_report =
        evaluate_model(&outcome.model, corpus, &cfg.eval).map_err(|e| e.in_stage("final-eval"))?;

    let result = RunResult {
        run_id: run_id.clone(),
        config: ResolvedRunConfig {
            experiment: cfg.clone(),
            run_seed,
            derived_seeds: seeds,
        },
        baseline: prepared.baseline,
        final_report,
        telemetry_path: "telemetry.jsonl".into(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    persist_run(&result, &run_dir).map_err(|e| e.in_stage("persist"))?;
    std::fs::remove_file(&marker)?;
    Ok(result)
}

fn write_schedule(schedule: &PairSchedule, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    schedule.dump(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn write_telemetry(rows: &[StepTelemetry], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn persist_run(result: &RunResult, run_dir: &Path) -> Result<()> {
    std::fs::write(
        run_dir.join("run.json"),
        serde_json::to_string_pretty(result)?,
    )?;
    std::fs::write(
        run_dir.join("meta.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "wall_time_secs": result.wall_time_secs,
        }))?,
    )?;
    std::fs::write(
        run_dir.join("per_entity.csv"),
        per_entity_csv(&result.final_report),
    )?;
    std::fs::write(run_dir.join("results.csv"), results_csv(result))?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render a per-entity breakdown as CSV (entity_id, fe, mu_t, em).
pub fn per_entity_csv(report: &AggregateReport) -> String {
    let mut out = String::from("entity_id,fe,mu_t,em\n");
    for (entity, row) in &report.per_entity {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(entity),
            fmt_opt(row.forget_efficacy),
            fmt_opt(row.model_utility),
            fmt_opt(row.exact_memorization),
        ));
    }
    out
}

const RESULTS_HEADER: &str =
    "run_id,method,strategy,composition,fe,mu_t,ppl_f,ppl_t,distinct_1,distinct_2,em\n";

fn results_row(result: &RunResult) -> String {
    let report = &result.final_report;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        csv_field(&result.run_id),
        result.method().as_str(),
        result.strategy().as_str(),
        result.composition().as_str(),
        report.forget_efficacy,
        report.model_utility,
        report.perplexity_forget,
        report.perplexity_test,
        fmt_opt(report.distinct_n.get(&1).copied()),
        fmt_opt(report.distinct_n.get(&2).copied()),
        report.exact_memorization,
    )
}

fn results_csv(result: &RunResult) -> String {
    format!("{RESULTS_HEADER}{}", results_row(result))
}

#[derive(Default)]
struct MeanAcc {
    sum: f64,
    count: usize,
}

impl MeanAcc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn push_opt(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.push(v);
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Write the seed-averaged `summary.csv` (methods x strategies x
/// compositions grid, stable lexicographic row order) and the seed-averaged
/// `per_entity.csv`.
pub fn emit_report(results: &[RunResult], out_dir: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(Error::EmptyArgument("result list"));
    }
    std::fs::create_dir_all(out_dir)?;

    type GridKey = (String, String, String);
    let mut grid: BTreeMap<GridKey, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        grid.entry((
            r.method().as_str().to_string(),
            r.strategy().as_str().to_string(),
            r.composition().as_str().to_string(),
        ))
        .or_default()
        .push(r);
    }

    let mut summary = String::from(
        "method,strategy,composition,n_seeds,fe,mu_t,ppl_f,ppl_t,distinct_1,distinct_2,em,baseline_fe,baseline_mu_t\n",
    );
    for ((method, strategy, composition), runs) in &grid {
        let mut cols: [MeanAcc; 9] = Default::default();
        for r in runs {
            cols[0].push(r.final_report.forget_efficacy);
            cols[1].push(r.final_report.model_utility);
            cols[2].push(r.final_report.perplexity_forget);
            cols[3].push(r.final_report.perplexity_test);
            cols[4].push_opt(r.final_report.distinct_n.get(&1).copied());
            cols[5].push_opt(r.final_report.distinct_n.get(&2).copied());
            cols[6].push(r.final_report.exact_memorization);
            cols[7].push(r.baseline.forget_efficacy);
            cols[8].push(r.baseline.model_utility);
        }
        summary.push_str(&format!("{method},{strategy},{composition},{}", runs.len()));
        for col in &cols {
            summary.push(',');
            summary.push_str(&fmt_opt(col.mean()));
        }
        summary.push('\n');
    }
    std::fs::write(out_dir.join("summary.csv"), summary)?;

    // Seed-averaged per-entity matrix over every run.
    let mut entity_cols: BTreeMap<String, [MeanAcc; 3]> = BTreeMap::new();
    for r in results {
        for (entity, row) in &r.final_report.per_entity {
            let cols = entity_cols.entry(entity.clone()).or_default();
            cols[0].push_opt(row.forget_efficacy);
            cols[1].push_opt(row.model_utility);
            cols[2].push_opt(row.exact_memorization);
        }
    }
    let mut per_entity = String::from("entity_id,fe,mu_t,em\n");
    for (entity, cols) in &entity_cols {
        per_entity.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(entity),
            fmt_opt(cols[0].mean()),
            fmt_opt(cols[1].mean()),
            fmt_opt(cols[2].mean()),
        ));
    }
    std::fs::write(out_dir.join("per_entity.csv"), per_entity)?;
    Ok(())
}

/// Load every `run.json` under a directory tree (for the report command).
pub fn load_run_results(dir: &Path) -> Result<Vec<RunResult>> {
    let mut found = Vec::new();
    collect_run_files(dir, &mut found)?;
    found.sort();
    let mut results = Vec::with_capacity(found.len());
    for path in found {
        let text = std::fs::read_to_string(&path)?;
        results.push(serde_json::from_str(&text)?);
    }
    Ok(results)
}

fn collect_run_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_run_files(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "run.json") {
            found.push(path);
        }
    }
    Ok(())
}

/// Round-trip helper used by the determinism checks: the byte-identical
/// JSON payload of a run (wall time excluded by construction).
pub fn run_payload_json(result: &RunResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(result)?)
}

/// Re-serialize a model checkpoint to its canonical bytes.
pub fn canonical_checkpoint_bytes(path: &Path) -> Result<Vec<u8>> {
    let model = model_from_json(&std::fs::read_to_string(path)?)?;
    Ok(model_to_json(&model)?.into_bytes())
}
