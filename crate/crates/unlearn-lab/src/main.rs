//! Command-line front end for the unlearning laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unlearn_lab::corpus::{
    compose_retain, load_corpus, save_corpus, CompositionMode, RetainComposition,
};
use unlearn_lab::harness::{
    emit_report, load_run_results, per_entity_csv, prepare_finetuned_model, run_experiment,
    DerivedSeeds, ExperimentConfig,
};
use unlearn_lab::metrics::{evaluate_model, EvalOptions};
use unlearn_lab::objectives::{unlearn_run, UnlearnMethod};
use unlearn_lab::scheduler::{build_schedule, SamplingStrategy, StrategyKind};
use unlearn_lab::seqmodel::{load_model, save_model};
use unlearn_lab::synth::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "unlearn-lab",
    version,
    about = "Entity unlearning laboratory: synthetic corpora, pairing schedules, unlearning runs, metric reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    #[value(name = "one2one-seq")]
    One2oneSeq,
    #[value(name = "one2one-rand")]
    One2oneRand,
    Cyclic,
    Melu,
}

impl From<StrategyArg> for StrategyKind {
    fn from(v: StrategyArg) -> Self {
        match v {
            StrategyArg::One2oneSeq => StrategyKind::OneToOneSeq,
            StrategyArg::One2oneRand => StrategyKind::OneToOneRandom,
            StrategyArg::Cyclic => StrategyKind::Cyclic,
            StrategyArg::Melu => StrategyKind::Melu,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ga,
    Gd,
    Dpo,
    Npo,
}

impl From<MethodArg> for UnlearnMethod {
    fn from(v: MethodArg) -> Self {
        match v {
            MethodArg::Ga => UnlearnMethod::Ga,
            MethodArg::Gd => UnlearnMethod::Gd,
            MethodArg::Dpo => UnlearnMethod::Dpo,
            MethodArg::Npo => UnlearnMethod::Npo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CompositionArg {
    Direct,
    Indirect,
    Balanced,
    Full,
}

impl From<CompositionArg> for CompositionMode {
    fn from(v: CompositionArg) -> Self {
        match v {
            CompositionArg::Direct => CompositionMode::DirectOnly,
            CompositionArg::Indirect => CompositionMode::IndirectOnly,
            CompositionArg::Balanced => CompositionMode::Balanced,
            CompositionArg::Full => CompositionMode::Full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic entity corpus (JSONL)
    Synth(SynthArgs),
    /// Fine-tune a fresh model on a corpus (forget + retain + test)
    Finetune(FinetuneArgs),
    /// Apply an unlearning method to a fine-tuned checkpoint
    Unlearn(UnlearnArgs),
    /// Evaluate a checkpoint: FE, MU-T, diversity, memorization, perplexity
    Eval(EvalArgs),
    /// Aggregate run directories into seed-averaged summary CSVs
    Report(ReportArgs),
    /// Full pipeline: fine-tune, unlearn, evaluate, report
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output corpus file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    entities: usize,
    /// Forget samples per entity
    #[arg(long, default_value_t = 5)]
    forget: usize,
    /// Direct-neighbor samples per entity
    #[arg(long, default_value_t = 4)]
    direct: usize,
    /// Indirect-neighbor samples per entity
    #[arg(long, default_value_t = 8)]
    indirect: usize,
    /// General-knowledge samples
    #[arg(long, default_value_t = 30)]
    general: usize,
    #[arg(long)]
    test_direct: Option<usize>,
    #[arg(long)]
    test_indirect: Option<usize>,
    #[arg(long)]
    test_general: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Experiment config supplying model and fine-tune settings
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fine-tuning epochs
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct UnlearnArgs {
    /// Fine-tuned model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    composition: Option<CompositionArg>,
    /// Unlearning epochs
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Greedy decoding budget per sample
    #[arg(long)]
    max_new: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory tree containing run.json files
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON); flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; repeat the flag for multiple seeds
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    composition: Option<CompositionArg>,
    /// Unlearning epochs
    #[arg(long)]
    epochs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> unlearn_lab::Result<()> {
    match command {
        Command::Synth(args) => synth_cmd(args),
        Command::Finetune(args) => finetune_cmd(args),
        Command::Unlearn(args) => unlearn_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Report(args) => report_cmd(args),
        Command::Run(args) => run_cmd(args),
    }
}

fn synth_cmd(args: SynthArgs) -> unlearn_lab::Result<()> {
    let mut spec = SyntheticSpec::new(
        args.entities,
        args.forget,
        args.direct,
        args.indirect,
        args.general,
        args.seed,
    );
    if let Some(v) = args.test_direct {
        spec.test_direct_per_entity = v;
    }
    if let Some(v) = args.test_indirect {
        spec.test_indirect_per_entity = v;
    }
    if let Some(v) = args.test_general {
        spec.n_test_general = v;
    }
    let bundle = generate_synthetic(&spec)?;
    save_corpus(&bundle, &args.out)?;
    println!(
        "wrote {}: {} forget / {} retain / {} test pairs, {} entities",
        args.out.display(),
        bundle.forget().len(),
        bundle.retain().len(),
        bundle.test().len(),
        bundle.entities().len()
    );
    Ok(())
}

fn base_config(
    config: Option<&PathBuf>,
    corpus: PathBuf,
    out: PathBuf,
) -> unlearn_lab::Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::new(corpus.clone(), out.clone()),
    };
    cfg.corpus_path = corpus;
    cfg.output_dir = out;
    Ok(cfg)
}

fn finetune_cmd(args: FinetuneArgs) -> unlearn_lab::Result<()> {
    let mut cfg = base_config(args.config.as_ref(), args.corpus, args.out)?;
    if let Some(epochs) = args.epochs {
        cfg.finetune.epochs = epochs;
    }
    let run_seed = args.seed.unwrap_or(0);
    let corpus_bytes = std::fs::read(&cfg.corpus_path)?;
    let corpus = load_corpus(&cfg.corpus_path)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let prepared = prepare_finetuned_model(&cfg, &corpus_bytes, &corpus, run_seed)?;
    let target = cfg.output_dir.join("finetuned.model.json");
    save_model(&prepared.model, &target)?;
    std::fs::write(
        cfg.output_dir.join("baseline.json"),
        serde_json::to_string_pretty(&prepared.baseline)?,
    )?;
    println!(
        "fine-tuned {} parameters; baseline FE {:.4}, MU-T {:.4}; checkpoint {}",
        prepared.model.param_count(),
        prepared.baseline.forget_efficacy,
        prepared.baseline.model_utility,
        target.display()
    );
    Ok(())
}

fn unlearn_cmd(args: UnlearnArgs) -> unlearn_lab::Result<()> {
    let mut cfg = base_config(args.config.as_ref(), args.corpus, args.out)?;
    if let Some(v) = args.strategy {
        cfg.strategy = v.into();
    }
    if let Some(v) = args.method {
        cfg.unlearn.method = v.into();
    }
    if let Some(v) = args.composition {
        cfg.composition = v.into();
    }
    if let Some(v) = args.epochs {
        cfg.unlearn.epochs = v;
    }
    let seeds = DerivedSeeds::for_run(args.seed.unwrap_or(0));

    let model = load_model(&args.checkpoint)?;
    let corpus = load_corpus(&cfg.corpus_path)?;
    std::fs::create_dir_all(&cfg.output_dir)?;

    let composed = compose_retain(
        &corpus,
        RetainComposition {
            mode: cfg.composition,
            seed: seeds.composition,
        },
    )?;
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
    )?;
    let mut buf = Vec::new();
    schedule.dump(&mut buf)?;
    std::fs::write(cfg.output_dir.join("schedule.jsonl"), buf)?;

    let outcome = unlearn_run(&model, &schedule, &corpus, &unlearn_cfg)?;
    let mut telemetry = Vec::new();
    for row in &outcome.telemetry {
        serde_json::to_writer(&mut telemetry, row)?;
        telemetry.push(b'\n');
    }
    std::fs::write(cfg.output_dir.join("telemetry.jsonl"), telemetry)?;
    let target = cfg.output_dir.join("unlearned.model.json");
    save_model(&outcome.model, &target)?;
    println!(
        "unlearned with {} over {} ({} pairs per epoch, {} epochs); checkpoint {}",
        unlearn_cfg.method.as_str(),
        cfg.strategy.as_str(),
        schedule.pairs_per_epoch(),
        schedule.n_epochs(),
        target.display()
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> unlearn_lab::Result<()> {
    let model = load_model(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus)?;
    let mut opts = EvalOptions::default();
    if let Some(v) = args.max_new {
        opts.max_new_tokens = v;
    }
    let report = evaluate_model(&model, &corpus, &opts)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("eval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(args.out.join("per_entity.csv"), per_entity_csv(&report))?;
    println!(
        "FE {:.4}  MU-T {:.4}  EM {:.4}  PPL-F {:.3}  PPL-T {:.3}",
        report.forget_efficacy,
        report.model_utility,
        report.exact_memorization,
        report.perplexity_forget,
        report.perplexity_test
    );
    Ok(())
}

fn report_cmd(args: ReportArgs) -> unlearn_lab::Result<()> {
    let results = load_run_results(&args.runs)?;
    emit_report(&results, &args.out)?;
    println!(
        "aggregated {} runs into {}",
        results.len(),
        args.out.join("summary.csv").display()
    );
    Ok(())
}

fn run_cmd(args: RunArgs) -> unlearn_lab::Result<()> {
    let mut cfg = match (&args.config, &args.corpus, &args.out) {
        (Some(path), _, _) => ExperimentConfig::from_json_file(path)?,
        (None, Some(corpus), Some(out)) => ExperimentConfig::new(corpus, out),
        _ => {
            return Err(unlearn_lab::Error::Config(
                "provide --config, or both --corpus and --out".into(),
            ))
        }
    };
    if let Some(corpus) = args.corpus {
        cfg.corpus_path = corpus;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(v) = args.strategy {
        cfg.strategy = v.into();
    }
    if let Some(v) = args.method {
        cfg.unlearn.method = v.into();
    }
    if let Some(v) = args.composition {
        cfg.composition = v.into();
    }
    if let Some(v) = args.epochs {
        cfg.unlearn.epochs = v;
    }

    let results = run_experiment(&cfg)?;
    for r in &results {
        println!(
            "{}: FE {:.4} (baseline {:.4})  MU-T {:.4} (baseline {:.4})  wall {:.1}s",
            r.run_id,
            r.final_report.forget_efficacy,
            r.baseline.forget_efficacy,
            r.final_report.model_utility,
            r.baseline.model_utility,
            r.wall_time_secs
        );
    }
    println!(
        "summary at {}",
        cfg.output_dir.join("summary.csv").display()
    );
    Ok(())
}
