//! Training orchestration: per-epoch graph refresh, batched BPR+CL updates,
//! periodic validation with early stopping, ablation sweeps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Interaction, NegativeSampler, SplitSet};
use crate::eval::{evaluate_ranking, EvalError, Metric, MetricsReport};
use crate::graphs::{GraphBuilder, GraphConfig, GraphError, GraphVariant};
use crate::jacobi::{self, FilterConfig};
use crate::linalg::DenseMatrix;
use crate::model::{
    adam_step, backward, forward_batch, init_embeddings, AdamHyper, AdamState, Checkpoint,
    EmbeddingTable, LossConfig, ModelError, ModelOptions, NoiseSource, Propagation,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch} (bpr={bpr}, cl={cl})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        bpr: f64,
        cl: f64,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Optimization protocol knobs.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Stop after this many evaluations without indicator improvement.
    pub patience: usize,
    pub indicator: Metric,
    pub topk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            batch_size: 2048,
            learning_rate: 1e-3,
            max_epochs: 500,
            eval_every: 10,
            patience: 10,
            indicator: Metric::Mrr,
            topk: 10,
            seed: 42,
        }
    }
}

/// Model variants exercised by the ablation suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    UaOnly,
    UaUq,
    NoPbgf,
    NoCl,
    MergedUaq,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::UaOnly,
        Variant::UaUq,
        Variant::NoPbgf,
        Variant::NoCl,
        Variant::MergedUaq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::UaOnly => "ua_only",
            Variant::UaUq => "ua_uq",
            Variant::NoPbgf => "no_pbgf",
            Variant::NoCl => "no_cl",
            Variant::MergedUaq => "merged_uaq",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn graph_variant(&self) -> GraphVariant {
        match self {
            Variant::Full | Variant::NoPbgf | Variant::NoCl => GraphVariant::Full,
            Variant::UaOnly => GraphVariant::UaOnly,
            Variant::UaUq => GraphVariant::UaUq,
            Variant::MergedUaq => GraphVariant::MergedUaq,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            propagation: match self {
                Variant::NoPbgf => Propagation::PlainPowers,
                _ => Propagation::Jacobi,
            },
            merged_answers: matches!(self, Variant::MergedUaq),
        }
    }

    /// Removing the contrastive module also removes its noise augmentation.
    pub fn adjust_loss(&self, mut cfg: LossConfig) -> LossConfig {
        if matches!(self, Variant::NoCl) {
            cfg.lambda2 = 0.0;
            cfg.noise_scale = 0.0;
        }
        cfg
    }
}

/// One validation evaluation during training.
#[derive(Clone, Debug)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub loss_bpr: f64,
    pub loss_cl: f64,
    pub metrics: MetricsReport,
}

impl HistoryEntry {
    /// `epoch loss_bpr loss_cl recall mrr ndcg hit precision`, tab-separated.
    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.loss_bpr,
            self.loss_cl,
            self.metrics.recall,
            self.metrics.mrr,
            self.metrics.ndcg,
            self.metrics.hit,
            self.metrics.precision
        )
    }
}

pub fn write_history<W: std::io::Write>(
    history: &[HistoryEntry],
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "# epoch\tloss_bpr\tloss_cl\trecall\tmrr\tndcg\thit\tprecision")?;
    for entry in history {
        writeln!(w, "{}", entry.to_tsv_line())?;
    }
    Ok(())
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryEntry>,
}

/// Clean (noise-free) final embeddings for evaluation.
pub fn clean_final_embeddings(
    graph: &crate::graphs::GlobalGraph,
    table: &EmbeddingTable,
    affiliation: &[u32],
    filter_cfg: &FilterConfig,
    opts: &ModelOptions,
) -> Result<DenseMatrix, ModelError> {
    let e0 = table.effective_e0(opts.merged_answers, affiliation);
    match opts.propagation {
        Propagation::Jacobi => Ok(jacobi::propagate(&graph.normalized, &e0, filter_cfg)?
            .final_embeddings),
        Propagation::PlainPowers => {
            let mut acc = e0.clone();
            let mut cur = e0;
            for _ in 1..=filter_cfg.layers {
                cur = graph.normalized.spmm(&cur);
                acc.axpy(1.0, &cur);
            }
            acc.scale(1.0 / (filter_cfg.layers + 1) as f64);
            Ok(acc)
        }
    }
}

/// Train one model variant. Deterministic given the seed: all randomness
/// (shuffling, negative sampling, augmentation noise) flows from one stream.
pub fn train(
    corpus: &Corpus,
    splits: &SplitSet,
    graph_cfg: GraphConfig,
    filter_cfg: FilterConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    variant: Variant,
) -> Result<TrainOutcome, TrainError> {
    let graph_cfg = GraphConfig {
        variant: variant.graph_variant(),
        ..graph_cfg
    };
    let loss_cfg = variant.adjust_loss(loss_cfg);
    let opts = variant.model_options();
    let layout = crate::graphs::NodeLayout::of(corpus);
    let affiliation = corpus.affiliation().to_vec();

    let mut rng = ChaCha20Rng::seed_from_u64(train_cfg.seed);
    let mut table = init_embeddings(layout, train_cfg.embedding_dim, train_cfg.seed);
    let mut adam = AdamState::new(layout.total(), train_cfg.embedding_dim);
    let hyper = AdamHyper {
        learning_rate: train_cfg.learning_rate,
        ..AdamHyper::default()
    };
    let builder = GraphBuilder::new(corpus, &splits.train, graph_cfg);
    let sampler = NegativeSampler::new(corpus, &splits.train);

    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut strikes = 0usize;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 0..train_cfg.max_epochs {
        let graph = builder.build(table.matrix())?;
        order.shuffle(&mut rng);
        let mut epoch_bpr = 0.0;
        let mut epoch_cl = 0.0;
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<Interaction> = chunk.iter().map(|&i| splits.train[i]).collect();
            let pairs = sampler.sample_batch(&batch, &mut rng)?;
            let state = forward_batch(
                &graph,
                &table,
                &affiliation,
                pairs,
                &filter_cfg,
                &loss_cfg,
                &opts,
                NoiseSource::Rng(&mut rng),
            )?;
            if !state.loss_total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    bpr: state.loss_bpr,
                    cl: state.loss_cl,
                });
            }
            epoch_bpr += state.loss_bpr;
            epoch_cl += state.loss_cl;
            let grads = backward(
                &state,
                &graph,
                &table,
                &affiliation,
                &filter_cfg,
                &loss_cfg,
                &opts,
            )?;
            adam_step(&mut table, &grads.grad, &mut adam, &hyper);
        }

        let due = train_cfg.eval_every > 0 && (epoch + 1) % train_cfg.eval_every == 0;
        if due && !splits.validation.is_empty() {
            let final_clean =
                clean_final_embeddings(&graph, &table, &affiliation, &filter_cfg, &opts)?;
            let metrics = evaluate_ranking(
                &final_clean,
                &layout,
                corpus,
                &splits.validation,
                &splits.train,
                None,
                loss_cfg.lambda1,
                train_cfg.topk,
            )?;
            history.push(HistoryEntry {
                epoch,
                loss_bpr: epoch_bpr,
                loss_cl: epoch_cl,
                metrics,
            });
            let indicator = metrics.get(train_cfg.indicator);
            let improved = best.as_ref().map_or(true, |(b, _)| indicator > *b);
            if improved {
                best = Some((
                    indicator,
                    Checkpoint {
                        table: table.clone(),
                        adam: adam.clone(),
                    },
                ));
                strikes = 0;
            } else {
                strikes += 1;
                if strikes >= train_cfg.patience {
                    log::info!("early stop at epoch {epoch} after {strikes} flat evaluations");
                    break;
                }
            }
        }
    }

    let checkpoint = match best {
        Some((_, ckpt)) => ckpt,
        None => Checkpoint { table, adam },
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}

/// Which held-out split evaluation reads its ground truth from. Testing also
/// excludes validation positives from each user's candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

impl EvalSplit {
    pub fn name(&self) -> &'static str {
        match self {
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        }
    }
}

/// Evaluate a trained table on a held-out split. The semantic graph blocks
/// are rebuilt from the trained embeddings.
pub fn split_metrics(
    corpus: &Corpus,
    splits: &SplitSet,
    table: &EmbeddingTable,
    graph_cfg: GraphConfig,
    filter_cfg: &FilterConfig,
    loss_cfg: &LossConfig,
    variant: Variant,
    k: usize,
    target: EvalSplit,
) -> Result<MetricsReport, TrainError> {
    let graph_cfg = GraphConfig {
        variant: variant.graph_variant(),
        ..graph_cfg
    };
    let opts = variant.model_options();
    let layout = crate::graphs::NodeLayout::of(corpus);
    let builder = GraphBuilder::new(corpus, &splits.train, graph_cfg);
    let graph = builder.build(table.matrix())?;
    let final_clean =
        clean_final_embeddings(&graph, table, corpus.affiliation(), filter_cfg, &opts)?;
    let (truth, extra): (&[Interaction], Option<&[Interaction]>) = match target {
        EvalSplit::Test => (&splits.test, Some(&splits.validation)),
        EvalSplit::Validation => (&splits.validation, None),
    };
    Ok(evaluate_ranking(
        &final_clean,
        &layout,
        corpus,
        truth,
        &splits.train,
        extra,
        loss_cfg.lambda1,
        k,
    )?)
}

/// Test-split evaluation used by the ablation table.
pub fn test_metrics(
    corpus: &Corpus,
    splits: &SplitSet,
    table: &EmbeddingTable,
    graph_cfg: GraphConfig,
    filter_cfg: &FilterConfig,
    loss_cfg: &LossConfig,
    variant: Variant,
    k: usize,
) -> Result<MetricsReport, TrainError> {
    split_metrics(
        corpus, splits, table, graph_cfg, filter_cfg, loss_cfg, variant, k, EvalSplit::Test,
    )
}

/// Train every variant under identical seeds/configs and tabulate test
/// metrics.
pub fn ablate(
    corpus: &Corpus,
    splits: &SplitSet,
    graph_cfg: GraphConfig,
    filter_cfg: FilterConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    variants: &[Variant],
) -> Result<Vec<(Variant, MetricsReport)>, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let outcome = train(
            corpus,
            splits,
            graph_cfg,
            filter_cfg,
            loss_cfg,
            train_cfg,
            variant,
        )?;
        let metrics = test_metrics(
            corpus,
            splits,
            &outcome.checkpoint.table,
            graph_cfg,
            &filter_cfg,
            &loss_cfg,
            variant,
            train_cfg.topk,
        )?;
        rows.push((variant, metrics));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split;
    use crate::synthgen::{generate, PlantedWorldSpec};

    fn small_world() -> (Corpus, SplitSet) {
        let spec = PlantedWorldSpec {
            communities: 2,
            users_per_community: 6,
            questions_per_community: 4,
            answers_per_community: 12,
            p_intra: 0.8,
            p_inter: 0.05,
            seed: 5,
        };
        let corpus = generate(&spec).unwrap();
        let splits = split(&corpus, (8, 1, 1), 11);
        (corpus, splits)
    }

    fn quick_cfg() -> (GraphConfig, FilterConfig, LossConfig, TrainConfig) {
        (
            GraphConfig {
                mu: 0.15,
                ..GraphConfig::default()
            },
            FilterConfig {
                layers: 2,
                ..FilterConfig::default()
            },
            LossConfig::default(),
            TrainConfig {
                embedding_dim: 8,
                batch_size: 64,
                max_epochs: 6,
                eval_every: 2,
                patience: 3,
                seed: 3,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint() {
        let (corpus, splits) = small_world();
        let (g, f, l, mut t) = quick_cfg();
        t.max_epochs = 0;
        let outcome = train(&corpus, &splits, g, f, l, t, Variant::Full).unwrap();
        assert!(outcome.history.is_empty());
        let layout = crate::graphs::NodeLayout::of(&corpus);
        let initial = init_embeddings(layout, t.embedding_dim, t.seed);
        assert_eq!(outcome.checkpoint.table, initial);
        assert_eq!(outcome.checkpoint.adam.step, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, splits) = small_world();
        let (g, f, l, t) = quick_cfg();
        let a = train(&corpus, &splits, g, f, l, t, Variant::Full).unwrap();
        let b = train(&corpus, &splits, g, f, l, t, Variant::Full).unwrap();
        assert_eq!(a.checkpoint.table, b.checkpoint.table);
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.to_tsv_line(), y.to_tsv_line());
        }
    }

    #[test]
    fn best_checkpoint_never_worse_than_any_evaluation() {
        let (corpus, splits) = small_world();
        let (g, f, l, mut t) = quick_cfg();
        t.max_epochs = 10;
        t.eval_every = 1;
        t.patience = 4;
        let outcome = train(&corpus, &splits, g, f, l, t, Variant::Full).unwrap();
        assert!(!outcome.history.is_empty());
        let best_seen = outcome
            .history
            .iter()
            .map(|h| h.metrics.get(t.indicator))
            .fold(f64::NEG_INFINITY, f64::max);
        // Re-evaluate the returned checkpoint on validation.
        let graph_cfg = GraphConfig {
            variant: Variant::Full.graph_variant(),
            ..g
        };
        let builder = GraphBuilder::new(&corpus, &splits.train, graph_cfg);
        let graph = builder.build(outcome.checkpoint.table.matrix()).unwrap();
        let final_clean = clean_final_embeddings(
            &graph,
            &outcome.checkpoint.table,
            corpus.affiliation(),
            &f,
            &Variant::Full.model_options(),
        )
        .unwrap();
        let layout = crate::graphs::NodeLayout::of(&corpus);
        let metrics = evaluate_ranking(
            &final_clean,
            &layout,
            &corpus,
            &splits.validation,
            &splits.train,
            None,
            l.lambda1,
            t.topk,
        )
        .unwrap();
        assert!(
            metrics.get(t.indicator) >= best_seen - 1e-12,
            "checkpoint {} vs best seen {}",
            metrics.get(t.indicator),
            best_seen
        );
    }

    #[test]
    fn losses_stay_finite_and_history_is_populated() {
        let (corpus, splits) = small_world();
        let (g, f, l, t) = quick_cfg();
        let outcome = train(&corpus, &splits, g, f, l, t, Variant::Full).unwrap();
        assert_eq!(outcome.history.len(), 3);
        for h in &outcome.history {
            assert!(h.loss_bpr.is_finite() && h.loss_cl.is_finite());
        }
    }

    #[test]
    fn ablate_single_variant_yields_single_row() {
        let (corpus, splits) = small_world();
        let (g, f, l, mut t) = quick_cfg();
        t.max_epochs = 2;
        let rows = ablate(&corpus, &splits, g, f, l, t, &[Variant::NoCl]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, Variant::NoCl);
    }
}
