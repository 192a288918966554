use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use advrank::adversarial::{train_with, EpochRecord};
use advrank::data::{load_embeddings, load_jsonl, save_jsonl, synth_generate, Corpus, Split, Vocabulary};
use advrank::eval::{evaluate, rank, write_predictions, RankedList};
use advrank::model::{Checkpoint, MatchingModel, ScoreMode};
use advrank::numerics::OpKind;
use advrank::verify::{run_suite, SUITE_TOLERANCE};
use advrank::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod config;

use config::RunConfig;

/// Errors carry the process exit code they map to.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
    Io(std::io::Error),
    ChecksFailed(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::ChecksFailed(n) => write!(f, "{n} gradient check(s) above tolerance {SUITE_TOLERANCE:e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(Error::Config(_) | Error::Contract(_)) => 1,
            CliError::Core(Error::Divergence { .. } | Error::NonFinite(_)) => 3,
            CliError::ChecksFailed(_) => 3,
            CliError::Core(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "advrank", version, about = "Adversarially trained multi-scale answer ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as JSONL.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Train discriminator and generator; writes checkpoints and metrics.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a split with a checkpoint; prints MAP@10 and MRR@10 (×100).
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Print one thread's candidates in ranked order.
    Rank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        thread: String,
    },
    /// Finite-difference check of every primitive, the scorer and both losses.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt one backward rule (verifies that the checker notices).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Word,
    Multi,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    adversarial: Option<Switch>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    neg_samples: Option<usize>,
}

fn base_config(common: &Common, command: &str) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.command = Some(command.to_string());
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(c) = &data.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(e) = &data.embeddings {
        cfg.embeddings = Some(e.clone());
    }
}

fn apply_train(cfg: &mut RunConfig, args: &TrainArgs) {
    if let Some(m) = args.mode {
        cfg.model.mode = match m {
            ModeArg::Word => ScoreMode::WordOnly,
            ModeArg::Multi => ScoreMode::WordPlusNgram,
            ModeArg::Full => ScoreMode::Full,
        };
    }
    if let Some(a) = args.adversarial {
        cfg.train.adversarial = matches!(a, Switch::On);
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(p) = args.pool_size {
        cfg.train.pool_size = p;
    }
    if let Some(s) = args.neg_samples {
        cfg.train.neg_samples = s;
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require_out()?;
    let synth = synth_generate(&cfg.synth)?;
    save_jsonl(&synth.corpus, out)?;
    println!(
        "wrote {} threads ({} candidates) to {}",
        synth.corpus.threads.len(),
        synth.corpus.num_candidates(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require_out()?.to_path_buf();
    let corpus = load_jsonl(cfg.require_corpus()?)?;
    let embeddings = match &cfg.embeddings {
        Some(path) => {
            let (table, coverage) =
                load_embeddings::<f64>(path, &corpus.vocabulary, cfg.model.embed_dim, cfg.seed)?;
            log::info!("embedding coverage {:.3}", coverage.fraction());
            Some(table)
        }
        None => None,
    };
    std::fs::create_dir_all(&out)?;
    cfg.archive(&out)?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let model_config = cfg.model.to_config(corpus.vocabulary.len());
    let outcome = train_with::<f64>(&corpus, &model_config, &cfg.train, embeddings, |r: &EpochRecord| {
        writeln!(metrics, "{}", serde_json::to_string(r)?)?;
        metrics.flush()?;
        Ok(())
    })?;
    let vocab = Some(corpus.vocabulary.tokens().to_vec());
    outcome.discriminator.save(out.join("discriminator.json"), vocab.clone())?;
    outcome.generator.save(out.join("generator.json"), vocab)?;
    if let Some(last) = outcome.log.iter().rev().find(|r| r.dev_map.is_some()) {
        println!(
            "epoch {} {:?}: held-out MAP@10 {:.2} MRR@10 {:.2}",
            last.epoch,
            last.phase,
            100.0 * last.dev_map.unwrap_or(0.0),
            100.0 * last.dev_mrr.unwrap_or(0.0)
        );
    }
    println!("checkpoints and metrics written to {}", out.display());
    Ok(())
}

/// Loads a checkpoint and the corpus tokenized with the checkpoint's vocabulary.
fn load_scoring(cfg: &RunConfig) -> Result<(MatchingModel<f64>, Corpus), CliError> {
    let path = cfg.require_checkpoint()?;
    let ckpt = Checkpoint::<f64>::load(path)?;
    let model = ckpt.to_model()?;
    let corpus = load_jsonl(cfg.require_corpus()?)?;
    let corpus = match &ckpt.vocabulary {
        Some(tokens) => corpus.reindex(&Vocabulary::from_tokens(tokens.clone())?)?,
        None => corpus,
    };
    Ok((model, corpus))
}

fn rank_split(model: &MatchingModel<f64>, corpus: &Corpus, split: Split) -> Result<Vec<RankedList>, CliError> {
    let lists = corpus
        .split(split)
        .map(|t| rank(t, model))
        .collect::<advrank::Result<Vec<_>>>()?;
    if lists.is_empty() {
        return Err(CliError::Core(Error::Evaluation(format!("split `{}` is empty", split.as_str()))));
    }
    Ok(lists)
}

fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, corpus) = load_scoring(cfg)?;
    let lists = rank_split(&model, &corpus, cfg.split)?;
    let metrics = evaluate(&lists)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let pred = out.join(format!("predictions.{}.tsv", cfg.split.as_str()));
    write_predictions(&lists, BufWriter::new(File::create(&pred)?))?;
    std::fs::write(
        out.join(format!("metrics.{}.json", cfg.split.as_str())),
        serde_json::to_string_pretty(&metrics).map_err(Error::from)?,
    )?;
    println!("split {}", cfg.split.as_str());
    println!("MAP@10 {}", 100.0 * metrics.map);
    println!("MRR@10 {}", 100.0 * metrics.mrr);
    println!("threads {} (excluded without relevant answers: {})", metrics.included, metrics.excluded);
    println!("predictions {}", pred.display());
    Ok(())
}

fn cmd_rank(cfg: &RunConfig, thread_id: &str) -> Result<(), CliError> {
    let (model, corpus) = load_scoring(cfg)?;
    let thread = corpus
        .thread(thread_id)
        .ok_or_else(|| CliError::Core(Error::Corpus(format!("unknown thread id `{thread_id}`"))))?;
    let list = rank(thread, &model)?;
    let stdout = std::io::stdout();
    write_predictions(std::slice::from_ref(&list), stdout.lock())?;
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, fault: Option<&str>) -> Result<(), CliError> {
    let fault = match fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| CliError::Config(format!("unknown op `{name}`")))?),
        None => None,
    };
    let results = run_suite(cfg.seed, fault)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<34} {:>10.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        failed += usize::from(!r.passed);
    }
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&results).map_err(Error::from)?)?;
    }
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    println!("all {} checks within {SUITE_TOLERANCE:e}", results.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common, threads } => {
            let mut cfg = base_config(&common, "synth")?;
            if let Some(n) = threads {
                cfg.synth.threads = n;
            }
            cfg.finalize()?;
            cmd_synth(&cfg)
        }
        Command::Train { common, data, train } => {
            let mut cfg = base_config(&common, "train")?;
            apply_data(&mut cfg, &data);
            apply_train(&mut cfg, &train);
            cfg.finalize()?;
            cmd_train(&cfg)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            split,
        } => {
            let mut cfg = base_config(&common, "eval")?;
            apply_data(&mut cfg, &data);
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c);
            }
            if let Some(s) = split {
                cfg.split = s;
            }
            cfg.finalize()?;
            cmd_eval(&cfg)
        }
        Command::Rank {
            common,
            data,
            checkpoint,
            thread,
        } => {
            let mut cfg = base_config(&common, "rank")?;
            apply_data(&mut cfg, &data);
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c);
            }
            cfg.finalize()?;
            cmd_rank(&cfg, &thread)
        }
        Command::Gradcheck { common, inject_fault } => {
            let mut cfg = base_config(&common, "gradcheck")?;
            cfg.finalize()?;
            cmd_gradcheck(&cfg, inject_fault.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
