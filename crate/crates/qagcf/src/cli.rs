//! Command-line entry points: `prepare`, `train`, `evaluate`, `ablate`,
//! `analyze`. Every tunable is a config key, settable in a `--config` file or
//! as a `--key value` override (overrides win). Each run writes an
//! `effective_config` snapshot next to its outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{self, Corpus, CorpusError, Format, SplitSet};
use crate::graphs::{dump_graph, GraphBuilder, NodeLayout};
use crate::linalg::DenseMatrix;
use crate::model::{
    init_embeddings, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
};
use crate::trainer::{self, ablate, train, write_history, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const USAGE: &str = "qagcf <prepare|train|evaluate|ablate|analyze> \
[spectral|clicks|similarity] [--config FILE] [--key value ...]";

/// Parse arguments (after the binary name) into a command and a config.
fn parse_args(args: &[String]) -> Result<(String, Option<String>, RunConfig), CliError> {
    let mut iter = args.iter().peekable();
    let command = iter
        .next()
        .ok_or_else(|| CliError::Usage(USAGE.to_string()))?
        .clone();
    let mut subcommand = None;
    if command == "analyze" {
        match iter.peek() {
            Some(s) if !s.starts_with("--") => subcommand = Some(iter.next().unwrap().clone()),
            _ => {
                return Err(CliError::Usage(
                    "analyze requires one of: spectral, clicks, similarity".to_string(),
                ))
            }
        }
    }
    // First pass: find --config so file values load before overrides.
    let rest: Vec<String> = iter.cloned().collect();
    let mut cfg = RunConfig::default();
    let mut i = 0;
    while i < rest.len() {
        if rest[i] == "--config" {
            let path = rest
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a path".to_string()))?;
            cfg = RunConfig::load(Path::new(path))?;
            break;
        }
        i += 1;
    }
    let mut i = 0;
    while i < rest.len() {
        let arg = &rest[i];
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("expected --key, got `{arg}`")))?;
        let value = rest
            .get(i + 1)
            .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
        if key != "config" {
            cfg.set(key, value)?;
        }
        i += 2;
    }
    Ok((command, subcommand, cfg))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    if !cfg.corpus_file.is_empty() {
        let file = File::open(&cfg.corpus_file)?;
        Ok(Corpus::deserialize(BufReader::new(file))?)
    } else if !cfg.data.is_empty() {
        Ok(Corpus::ingest(Path::new(&cfg.data), Format::Tsv)?)
    } else {
        Err(CliError::Usage(
            "set `data` (raw TSV) or `corpus_file` (serialized corpus)".to_string(),
        ))
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::write(dir.join("effective_config"), cfg.emit())?;
    Ok(())
}

fn configure_threads(cfg: &RunConfig) {
    #[cfg(feature = "parallel")]
    if cfg.threads > 0 {
        // Ignore the error if a pool already exists (repeat calls in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if cfg.threads > 1 {
        log::warn!("built without the `parallel` feature; --threads is a no-op");
    }
}

fn write_split(path: &Path, part: &[crate::corpus::Interaction]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in part {
        writeln!(w, "{} {} {}", it.user, it.question, it.answer)?;
    }
    Ok(())
}

fn split_corpus(cfg: &RunConfig, corpus: &Corpus) -> SplitSet {
    corpus::split(corpus, (8, 1, 1), cfg.seed)
}

/// Embedding table for analysis commands: a checkpoint when given, otherwise
/// a fresh seed-deterministic initialization.
fn analysis_table(
    cfg: &RunConfig,
    corpus: &Corpus,
) -> Result<(crate::model::EmbeddingTable, &'static str), CliError> {
    if cfg.checkpoint.is_empty() {
        let table = init_embeddings(NodeLayout::of(corpus), cfg.embedding_dim, cfg.seed);
        Ok((table, "xavier-init"))
    } else {
        let ckpt = load_checkpoint(Path::new(&cfg.checkpoint))?;
        Ok((ckpt.table, "checkpoint"))
    }
}

fn cmd_prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let splits = split_corpus(cfg, &corpus);
    let dir = out_dir(cfg)?;
    let mut w = BufWriter::new(File::create(dir.join("corpus.txt"))?);
    corpus.serialize(&mut w)?;
    w.flush()?;
    write_split(&dir.join("split_train.txt"), &splits.train)?;
    write_split(&dir.join("split_validation.txt"), &splits.validation)?;
    write_split(&dir.join("split_test.txt"), &splits.test)?;
    write_effective_config(cfg, &dir)?;
    println!(
        "prepared corpus: {} users, {} questions, {} answers, {} interactions \
(train {}, validation {}, test {})",
        corpus.num_users(),
        corpus.num_questions(),
        corpus.num_answers(),
        corpus.interactions().len(),
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let splits = split_corpus(cfg, &corpus);
    let dir = out_dir(cfg)?;
    let outcome = train(
        &corpus,
        &splits,
        cfg.graph_config(),
        cfg.filter_config(),
        cfg.loss_config(),
        cfg.train_config(),
        cfg.variant,
    )?;
    save_checkpoint(&dir.join("checkpoint.bin"), &outcome.checkpoint)?;
    let mut w = BufWriter::new(File::create(dir.join("history.tsv"))?);
    write_history(&outcome.history, &mut w)?;
    w.flush()?;
    if cfg.dump_graph {
        let builder = GraphBuilder::new(&corpus, &splits.train, cfg.graph_config());
        let graph = builder
            .build(outcome.checkpoint.table.matrix())
            .map_err(TrainError::Graph)?;
        let mut w = BufWriter::new(File::create(dir.join("graph.txt"))?);
        dump_graph(&graph, &mut w)?;
        w.flush()?;
    }
    write_effective_config(cfg, &dir)?;
    match outcome.history.last() {
        Some(h) => println!(
            "trained {} epochs ({} evaluations); best {}@{}: {:.6}",
            h.epoch + 1,
            outcome.history.len(),
            cfg.indicator.name(),
            cfg.topk,
            outcome
                .history
                .iter()
                .map(|h| h.metrics.get(cfg.indicator))
                .fold(f64::NEG_INFINITY, f64::max),
        ),
        None => println!("trained with no evaluations (empty history)"),
    }
    Ok(())
}

fn checkpoint_for_eval(cfg: &RunConfig, dir: &Path) -> Result<Checkpoint, CliError> {
    let path = if cfg.checkpoint.is_empty() {
        dir.join("checkpoint.bin")
    } else {
        PathBuf::from(&cfg.checkpoint)
    };
    Ok(load_checkpoint(&path)?)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let splits = split_corpus(cfg, &corpus);
    let dir = out_dir(cfg)?;
    let ckpt = checkpoint_for_eval(cfg, &dir)?;
    let metrics = trainer::split_metrics(
        &corpus,
        &splits,
        &ckpt.table,
        cfg.graph_config(),
        &cfg.filter_config(),
        &cfg.loss_config(),
        cfg.variant,
        cfg.topk,
        cfg.eval_split,
    )?;
    std::fs::write(dir.join("metrics.tsv"), metrics.to_tsv())?;
    std::fs::write(dir.join("metrics.txt"), metrics.to_kv())?;
    write_effective_config(cfg, &dir)?;
    print!("{}", metrics.to_tsv());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let splits = split_corpus(cfg, &corpus);
    let dir = out_dir(cfg)?;
    let variants = cfg.ablate_variant_list()?;
    let rows = ablate(
        &corpus,
        &splits,
        cfg.graph_config(),
        cfg.filter_config(),
        cfg.loss_config(),
        cfg.train_config(),
        &variants,
    )?;
    let mut table = format!(
        "variant\trecall@{k}\tmrr@{k}\tndcg@{k}\thit@{k}\tprecision@{k}\n",
        k = cfg.topk
    );
    for (variant, m) in &rows {
        table.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            variant.name(),
            m.recall,
            m.mrr,
            m.ndcg,
            m.hit,
            m.precision
        ));
    }
    std::fs::write(dir.join("ablation.tsv"), &table)?;
    write_effective_config(cfg, &dir)?;
    print!("{table}");
    Ok(())
}

fn question_answer_blocks(
    table: &crate::model::EmbeddingTable,
) -> (DenseMatrix, DenseMatrix) {
    let layout = *table.layout();
    let d = table.dim();
    let mut q = DenseMatrix::zeros(layout.questions, d);
    for i in 0..layout.questions {
        q.row_mut(i)
            .copy_from_slice(table.matrix().row(layout.question(i as u32) as usize));
    }
    let mut a = DenseMatrix::zeros(layout.answers, d);
    for i in 0..layout.answers {
        a.row_mut(i)
            .copy_from_slice(table.matrix().row(layout.answer(i as u32) as usize));
    }
    (q, a)
}

fn cmd_analyze(cfg: &RunConfig, which: &str) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let dir = out_dir(cfg)?;
    match which {
        "spectral" => {
            let (table, source) = analysis_table(cfg, &corpus)?;
            let report = analysis::spectral_analyze(
                &corpus,
                table.matrix(),
                &cfg.graph_config(),
                cfg.max_nodes,
                cfg.seed,
            )?;
            let mut w = BufWriter::new(File::create(dir.join("spectral_scatter.tsv"))?);
            writeln!(w, "# embeddings={source}")?;
            report.write_scatter(&mut w)?;
            w.flush()?;
            let fmt = |p: Option<f64>| p.map_or("nan".to_string(), |v| format!("{v:.4}"));
            println!(
                "spectral bands: low={} high={} mid={}",
                fmt(report.pearson_low),
                fmt(report.pearson_high),
                fmt(report.pearson_mid)
            );
        }
        "clicks" => {
            let report = analysis::click_ratio_analysis(
                &corpus,
                cfg.min_exposures,
                cfg.min_answers,
                cfg.analysis_bins,
            );
            let mut w = BufWriter::new(File::create(dir.join("click_ratio.tsv"))?);
            report.write_histogram(&mut w)?;
            w.flush()?;
            println!(
                "click ratios over {} qualifying questions (proxy={})",
                report.ratios.len(),
                report.proxy
            );
        }
        "similarity" => {
            let (q_vecs, a_vecs, source) = if cfg.vectors_file.is_empty() {
                let (table, source) = analysis_table(cfg, &corpus)?;
                let (q, a) = question_answer_blocks(&table);
                (q, a, source)
            } else {
                let (q, a) = analysis::load_vectors(Path::new(&cfg.vectors_file), &corpus)?;
                (q, a, "vectors-file")
            };
            let groups = analysis::similarity_group_analysis(
                &q_vecs,
                &a_vecs,
                &corpus,
                cfg.analysis_samples,
                cfg.seed,
            )?;
            let mut w = BufWriter::new(File::create(dir.join("similarity_groups.tsv"))?);
            writeln!(w, "# vectors={source}")?;
            groups.write_kv(&mut w)?;
            w.flush()?;
            println!(
                "similarity groups: wqa={:.4} bqa={:.4} weq={:.4} beq={:.4}",
                groups.wqa, groups.bqa, groups.weq, groups.beq
            );
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown analyze target `{other}` (expected spectral, clicks or similarity)"
            )))
        }
    }
    write_effective_config(cfg, &dir)?;
    Ok(())
}

/// Run one CLI invocation. `args` excludes the binary name.
pub fn run(args: &[String]) -> Result<(), CliError> {
    let (command, subcommand, cfg) = parse_args(args)?;
    configure_threads(&cfg);
    match command.as_str() {
        "prepare" => cmd_prepare(&cfg),
        "train" => cmd_train(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "ablate" => cmd_ablate(&cfg),
        "analyze" => cmd_analyze(&cfg, subcommand.as_deref().unwrap_or("")),
        other => Err(CliError::Usage(format!(
            "unknown command `{other}`; {USAGE}"
        ))),
    }
}
