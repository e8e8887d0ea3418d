//! Subcommands of the `ura` binary.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ura_core::corpus::import::import_release;
use ura_core::corpus::{corpus_stats, generate_synthetic, load_corpus, save_corpus, write_page_images, Split};
use ura_core::eval::{Evaluator, MetricReport, OracleRanker, Setting};
use ura_core::featurize::build_vocab;
use ura_core::model::TaskFlags;
use ura_core::par::{self, Mode};
use ura_core::qa::AnswerOptions;
use ura_core::retrieval::build_index;
use ura_core::train::{fit, TrainConfig};

use crate::artifacts::{featurizer_for, load_model, ArtifactPaths, Artifacts, VOCAB_FILE};
use crate::inference::{AskRequest, DEFAULT_TOP_K};
use crate::service::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "ura", version, about = "Page retrieval and multimodal question answering over product manuals")]
pub struct Cli {
    /// Training config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for corpus synthesis and training; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run all data-parallel work on one thread (bitwise reproducible either way).
    #[arg(long, global = true)]
    pub single_threaded: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Checkpoint and related inputs shared by the inference commands.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Defaults to `vocab.json` next to the checkpoint.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus with rendered page images.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        manuals: usize,
        #[arg(long, default_value_t = 8)]
        pages: usize,
        /// Questions per page.
        #[arg(long, default_value_t = 2)]
        qas: usize,
        /// Skip writing PNG page images.
        #[arg(long)]
        no_images: bool,
    },
    /// Convert a released dataset directory into the corpus format.
    Import {
        #[arg(long, value_name = "DIR")]
        release: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value = "manuals")]
        name: String,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
    },
    /// Train and keep the checkpoint that scores best on validation.
    Train {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Output directory for best.ckpt, vocab.json and train_log.jsonl.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Objectives, e.g. `PR+TA+VA`, `PR_g`, `PR+TA`.
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// `tiny` or `base`.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Encode every page and write the retrieval index.
    Index {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Rank pages for a question.
    Retrieve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "FILE")]
        index: Option<PathBuf>,
        #[arg(long)]
        question: String,
        /// Search one manual; all manuals when omitted.
        #[arg(long)]
        manual: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Answer a question on the best retrieved page, or on `--page`.
    Answer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "FILE")]
        index: Option<PathBuf>,
        #[arg(long)]
        question: String,
        #[arg(long)]
        manual: Option<String>,
        /// Answer on this page of `--manual` instead of retrieving.
        #[arg(long, requires = "manual")]
        page: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        /// Region selection threshold.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Score a split and write a metric report.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "FILE")]
        index: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// `separate` (gold page) or `cascade` (retrieved page).
        #[arg(long, default_value = "separate")]
        setting: Setting,
        /// Pages handed to the reader in the cascade setting.
        #[arg(long, default_value_t = 1)]
        top_k: usize,
        /// Cascade over a retriever that always ranks the gold page first.
        #[arg(long)]
        oracle: bool,
        /// Also report per gold region label.
        #[arg(long)]
        by_label: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Report path; printed to stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "FILE")]
        index: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn train_config(cli: &Cli) -> anyhow::Result<TrainConfig> {
    let mut c = match &cli.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn artifacts(model: &ModelArgs, index: Option<&Path>) -> anyhow::Result<Artifacts> {
    Ok(Artifacts::load(&ArtifactPaths {
        checkpoint: model.checkpoint.clone(),
        vocab: model.vocab.clone(),
        index: index.map(Path::to_path_buf),
        corpus: model.corpus.clone(),
    })?)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mode = if cli.single_threaded { Mode::Sequential } else { Mode::Parallel };
    par::with_mode(mode, || dispatch(&cli))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let config = train_config(cli)?;
    match &cli.command {
        Command::Synth {
            out,
            manuals,
            pages,
            qas,
            no_images,
        } => {
            let corpus = generate_synthetic(config.seed, *manuals, *pages, *qas)?;
            save_corpus(&corpus, out)?;
            if !no_images {
                write_page_images(&corpus, out)?;
            }
            eprintln!(
                "wrote {} manuals, {} pages, {} questions to {}",
                corpus.manuals.len(),
                corpus.manuals.iter().map(|m| m.pages.len()).sum::<usize>(),
                corpus.manuals.iter().map(|m| m.qas.len()).sum::<usize>(),
                out.display()
            );
        }
        Command::Import { release, out, name } => {
            let (corpus, report) = import_release(release, name)?;
            save_corpus(&corpus, out)?;
            eprintln!("{report:?}");
        }
        Command::Stats { corpus } => {
            let corpus = load_corpus(corpus)?;
            println!("{}", serde_json::to_string_pretty(&corpus_stats(&corpus))?);
        }
        Command::Train {
            corpus: corpus_dir,
            out,
            tasks,
            epochs,
            max_steps,
            learning_rate,
            batch_size,
            profile,
        } => {
            let mut config = config;
            config.checkpoint_dir = out.clone();
            if let Some(t) = tasks {
                config.tasks = TaskFlags::parse(t)?;
            }
            if let Some(v) = epochs {
                config.epochs = *v;
            }
            if max_steps.is_some() {
                config.max_steps = *max_steps;
            }
            if let Some(v) = learning_rate {
                config.learning_rate = *v;
            }
            if let Some(v) = batch_size {
                config.batch_size = *v;
            }
            if let Some(v) = profile {
                config.profile = v.clone();
            }
            config.validate()?;
            let corpus = load_corpus(corpus_dir)?;
            let vocab = Arc::new(build_vocab(&corpus, config.vocab_size)?);
            fs::create_dir_all(out)?;
            vocab.save(out.join(VOCAB_FILE))?;
            fs::write(out.join("train.conf"), config.to_kv_string())?;
            let featurizer = featurizer_for(&corpus, corpus_dir, vocab);
            let outcome = fit(&corpus, &featurizer, &config)?;
            eprintln!(
                "best epoch {} of {}; checkpoint {}",
                outcome.best_epoch,
                outcome.log.len(),
                outcome.checkpoint_path.display()
            );
        }
        Command::Index { model, out } => {
            let loaded = load_model(&model.checkpoint, model.vocab.as_deref())?;
            let corpus = load_corpus(&model.corpus)?;
            let featurizer = featurizer_for(&corpus, &model.corpus, loaded.vocab.clone());
            let manuals: Vec<_> = corpus.manuals.iter().collect();
            let index = build_index(&loaded.checkpoint.model, &featurizer, &manuals, &loaded.checkpoint_hash)?;
            index.save(out)?;
            eprintln!("indexed {} pages into {}", index.len(), out.display());
        }
        Command::Retrieve {
            model,
            index,
            question,
            manual,
            top_k,
        } => {
            let art = artifacts(model, index.as_deref())?;
            let ranked = art.rank(question, manual.as_deref(), *top_k)?;
            println!("{}", serde_json::to_string_pretty(&ranked.hits)?);
        }
        Command::Answer {
            model,
            index,
            question,
            manual,
            page,
            top_k,
            threshold,
        } => {
            let art = artifacts(model, index.as_deref())?;
            let opts = AnswerOptions {
                threshold: *threshold,
                ..AnswerOptions::default()
            };
            let value = match (manual, page) {
                (Some(m), Some(p)) => {
                    let (pred, regions) = art.predict_on(question, m, *p, &opts)?;
                    serde_json::json!({ "answer_text": pred.text, "regions": regions, "retrieved_pages": [] })
                }
                _ => {
                    let req = AskRequest {
                        manual_id: manual.clone(),
                        question: question.clone(),
                        top_k: Some(*top_k),
                    };
                    serde_json::to_value(art.ask(&req, &opts)?)?
                }
            };
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        Command::Eval {
            model,
            index,
            split,
            setting,
            top_k,
            oracle,
            by_label,
            threshold,
            out,
        } => {
            if *top_k != 1 {
                bail!("only --top-k 1 is supported: the reader answers on the single best page");
            }
            if *oracle && *setting != Setting::Cascade {
                bail!("--oracle applies to the cascade setting");
            }
            let art = artifacts(model, index.as_deref())?;
            let split: Split = split.parse()?;
            let view = art.corpus.view(split);
            let ckpt = &art.model.checkpoint;
            let mut ev = Evaluator::new(&ckpt.model, &art.featurizer, &art.pages, &art.index, ckpt.tasks);
            ev.answer.threshold = *threshold;
            let report = match setting {
                Setting::Separate => ev.evaluate_separate(&view)?,
                Setting::Cascade if *oracle => ev.evaluate_cascade(&view, Some(&OracleRanker))?,
                Setting::Cascade => ev.evaluate_cascade(&view, None)?,
            };
            eprintln!("{}", MetricReport::table(&[(report.model.as_str(), &report)]));
            write_or_print(out.as_deref(), &report.to_json()?)?;
            if *by_label {
                let buckets = ev.report_by_region_label(&view)?;
                let rows: Vec<(&str, &MetricReport)> = buckets.iter().map(|(l, r)| (l.as_str(), r)).collect();
                eprintln!("{}", MetricReport::table(&rows));
                let named: std::collections::BTreeMap<&str, &MetricReport> =
                    buckets.iter().map(|(l, r)| (l.as_str(), r)).collect();
                let text = serde_json::to_string_pretty(&named)?;
                match out {
                    Some(p) => write_or_print(Some(&p.with_extension("by_label.json")), &text)?,
                    None => println!("{text}"),
                }
            }
        }
        Command::Serve {
            model,
            index,
            host,
            port,
        } => {
            let art = artifacts(model, index.as_deref())?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(AppState::new(art, AnswerOptions::default()), addr))?;
        }
    }
    Ok(())
}
