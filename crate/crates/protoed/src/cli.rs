//! Command-line interface.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use protoed_core::corpus::Dataset;
use protoed_core::eval::micro_f1;
use protoed_core::sampler::{most_frequent_types, sample_train_dev, split_class_transfer, SampleSpec};
use protoed_core::synthetic::gen_synthetic;
use protoed_core::training::run_low_resource;

use crate::bench::{Benchmark, TransferBenchmark};
use crate::checkpoint;
use crate::config::TrainConfig;
use crate::corpus_io::{load_corpus, parse_corpus_with_schema, read_mentions, write_corpus, write_predictions, write_schema};
use crate::error::{Error, Result};
use crate::grid::{grid, transfer_grid, GridEntry, GridLog, GridTable};
use crate::runlog::{RunLog, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "protoed", version, about = "Prototype-based few-shot event detection experiments")]
pub struct Cli {
    /// Seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML training config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-trigger corpus and its schema.
    GenSynth(GenSynthArgs),
    /// Draw K-shot train and dev sets from a corpus.
    Sample(SampleArgs),
    /// Split a corpus into source data and a target pool.
    SplitTransfer(SplitArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Score predictions (or a checkpoint) against gold mentions.
    Eval(EvalArgs),
    /// Low-resource grid over methods and seeds on the synthetic benchmark.
    Grid(GridArgs),
    /// Source x target class-transfer grid on the synthetic benchmark.
    TransferGrid(TransferGridArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Schema JSON; inferred from the corpus when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub n_types: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_sentences: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub distractor_rate: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    #[arg(long)]
    pub k_train: usize,
    #[arg(long, default_value_t = 0)]
    pub k_dev: usize,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_dev: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    #[arg(long, conflicts_with = "source_types", required_unless_present = "source_types")]
    pub n_source_types: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub source_types: Option<Vec<String>>,
    #[arg(long)]
    pub out_source: PathBuf,
    #[arg(long)]
    pub out_target_pool: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Preset name or `key=value,...`; overrides the config file.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Predictions on the test set.
    #[arg(long, requires = "test")]
    pub pred_out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Schema of the gold corpus when predicting from a checkpoint.
    #[arg(long, requires = "checkpoint")]
    pub schema: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub pred_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridCommon {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the table as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Presets or raw method forms, separated by `;`.
    #[arg(long, value_delimiter = ';', required = true)]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub common: GridCommon,
}

#[derive(Debug, Args)]
pub struct TransferGridArgs {
    /// Source methods; `none` trains targets from scratch.
    #[arg(long, value_delimiter = ';', required = true)]
    pub sources: Vec<String>,
    #[arg(long, value_delimiter = ';', required = true)]
    pub targets: Vec<String>,
    #[command(flatten)]
    pub common: GridCommon,
}

fn config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load(cfg: &TrainConfig, corpus: &Path, schema: Option<&Path>) -> Result<Dataset> {
    load_corpus(corpus, schema, cfg.paradigm()?)
}

/// Run a parsed command; returns what to print on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::GenSynth(a) => {
            let spec = protoed_core::synthetic::SyntheticSpec {
                n_types: a.n_types,
                n_sentences: a.n_sentences,
                vocab_size: a.vocab_size,
                pool_size: a.pool_size,
                distractor_rate: a.distractor_rate,
                seed: cfg.seed,
                ..Default::default()
            };
            let d = gen_synthetic(&spec)?;
            write_corpus(&a.out, &d)?;
            if let Some(s) = &a.schema_out {
                write_schema(s, d.schema())?;
            }
            Ok(format!("wrote {} sentences, {} mentions\n", d.len(), d.n_mentions()))
        }
        Command::Sample(a) => {
            let d = load(&cfg, &a.input.corpus, a.input.schema.as_deref())?;
            let (train, dev) = sample_train_dev(&d, &SampleSpec::new(a.k_train, a.k_dev, cfg.seed)?)?;
            write_corpus(&a.out_train, &train)?;
            if let Some(p) = &a.out_dev {
                write_corpus(p, &dev)?;
            }
            Ok(format!("train {} sentences, dev {} sentences\n", train.len(), dev.len()))
        }
        Command::SplitTransfer(a) => {
            let d = load(&cfg, &a.input.corpus, a.input.schema.as_deref())?;
            let source = match (&a.source_types, a.n_source_types) {
                (Some(t), _) => t.clone(),
                (None, Some(n)) => most_frequent_types(&d, n),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let split = split_class_transfer(&d, &source)?;
            write_corpus(&a.out_source, &split.source_data)?;
            write_corpus(&a.out_target_pool, &split.target_pool)?;
            Ok(format!(
                "source types: {}\ntarget types: {}\nsource {} sentences, target pool {} sentences\n",
                split.source_types.join(","),
                split.target_types.join(","),
                split.source_data.len(),
                split.target_pool.len()
            ))
        }
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Eval(a) => match (&a.pred, &a.checkpoint) {
            (Some(p), _) => {
                let prf = micro_f1(&read_mentions(p)?, &read_mentions(&a.gold)?)?;
                Ok(format_prf(prf.precision, prf.recall, prf.f1))
            }
            (None, Some(c)) => {
                cmd_eval_checkpoint(&checkpoint::load(c)?, &a.gold, a.schema.as_deref(), a.pred_out.as_deref())
            }
            (None, None) => unreachable!("clap requires one of them"),
        },
        Command::Grid(a) => {
            let entries = a.methods.iter().map(|m| GridEntry::parse(m)).collect::<Result<Vec<_>>>()?;
            let bench = Benchmark::synthetic(&cfg.benchmark)?;
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + a.common.seeds).collect();
            let table = with_log(&cfg, &a.common, |log| grid(&entries, &seeds, &bench, cfg.sampling, &cfg.options()?, log))?;
            finish_grid(&a.common, table)
        }
        Command::TransferGrid(a) => {
            let sources = a
                .sources
                .iter()
                .map(|m| if m == "none" { Ok(None) } else { GridEntry::parse(m).map(Some) })
                .collect::<Result<Vec<_>>>()?;
            let targets = a.targets.iter().map(|m| GridEntry::parse(m)).collect::<Result<Vec<_>>>()?;
            let bench = TransferBenchmark::synthetic(&cfg.benchmark)?;
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + a.common.seeds).collect();
            let table = with_log(&cfg, &a.common, |log| {
                transfer_grid(&sources, &targets, &seeds, &bench, cfg.sampling, &cfg.options()?, log)
            })?;
            finish_grid(&a.common, table)
        }
    }
}

fn with_log<T>(cfg: &TrainConfig, common: &GridCommon, f: impl FnOnce(Option<&GridLog>) -> Result<T>) -> Result<T> {
    let hash = cfg.hash();
    match &common.log {
        Some(p) => {
            let log = RunLog::new(p);
            f(Some(&GridLog { log: &log, config_hash: &hash }))
        }
        None => f(None),
    }
}

fn finish_grid(common: &GridCommon, table: GridTable) -> Result<String> {
    if let Some(p) = &common.json {
        let text = serde_json::to_string_pretty(&table).expect("table serializes");
        std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e))?;
    }
    Ok(table.render())
}

fn cmd_eval_checkpoint(
    model: &protoed_core::training::TrainedModel,
    gold_path: &Path,
    schema: Option<&Path>,
    pred_out: Option<&Path>,
) -> Result<String> {
    let gold = match schema {
        Some(s) => load_corpus(gold_path, Some(s), model.paradigm)?,
        // the model's schema keeps the type order of training
        None => parse_corpus_with_schema(gold_path, model.schema.clone(), model.paradigm)?,
    };
    let pred = model.predict(&gold)?;
    if let Some(p) = pred_out {
        write_predictions(p, &pred)?;
    }
    let gold_pairs: Vec<_> = gold.sentences().iter().map(|s| (s.id().to_string(), s.mentions().to_vec())).collect();
    let prf = micro_f1(&pred, &gold_pairs)?;
    Ok(format_prf(prf.precision, prf.recall, prf.f1))
}

fn cmd_train(cfg: &TrainConfig, a: &TrainArgs) -> Result<String> {
    let method = match &a.method {
        Some(m) => m.parse()?,
        None => cfg.method()?,
    };
    let options = cfg.options()?;
    let train = load(cfg, &a.train, a.schema.as_deref())?;
    let schema = train.schema().clone();
    let with_schema = |p: &Path| parse_corpus_with_schema(p, schema.clone(), train.paradigm());
    let dev = match &a.dev {
        Some(p) => with_schema(p)?,
        None => train.with_sentences(Vec::new())?,
    };
    let test = match &a.test {
        Some(p) => with_schema(p)?,
        None => dev.clone(),
    };
    let allowed: BTreeSet<&str> = schema.types().iter().map(String::as_str).collect();
    protoed_core::sampler::assert_labels_within(&dev, &allowed)?;
    let outcome = run_low_resource(&method, &train, &dev, &test, &options, cfg.seed, None)?;
    checkpoint::save(&a.out, &outcome.model)?;
    if let Some(p) = &a.pred_out {
        write_predictions(p, &outcome.model.predict(&test)?)?;
    }
    let mut out = format!("method {method}\nlr {}\n", outcome.lr);
    if let Some(f) = outcome.dev_f1 {
        out += &format!("dev F1 {f:.4}\n");
    }
    if a.test.is_some() {
        let s = outcome.score;
        out += &format_prf(s.precision, s.recall, s.f1);
    }
    if let Some(p) = &a.log {
        let has_test = a.test.is_some();
        RunLog::new(p).append(&RunRecord {
            config_hash: cfg.hash(),
            cell: "train".into(),
            method: method.to_string(),
            seed: cfg.seed,
            lr: Some(outcome.lr),
            dev_f1: outcome.dev_f1,
            precision: has_test.then_some(outcome.score.precision),
            recall: has_test.then_some(outcome.score.recall),
            f1: has_test.then_some(outcome.score.f1),
            error: None,
        })?;
    }
    Ok(out)
}

/// Scores at four decimals.
pub fn format_prf(precision: f64, recall: f64, f1: f64) -> String {
    format!("P {precision:.4}\nR {recall:.4}\nF1 {f1:.4}\n")
}

/// One-line JSON error report.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}
