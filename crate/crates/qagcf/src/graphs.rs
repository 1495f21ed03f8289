//! Collaborative (U-Q, U-A) and semantic (Q-A, Q-Q) graph construction, the
//! global merge, and its symmetric normalization.
//!
//! All matrices live in global node coordinates: users occupy `[0, M)`,
//! questions `[M, M+N)`, answers `[M+N, M+N+O)`. The semantic blocks depend on
//! the trainable embeddings and are rebuilt at every epoch start.

use std::collections::HashSet;

use thiserror::Error;

use crate::corpus::{Corpus, Interaction};
use crate::linalg::{cosine, DenseMatrix, SparseError, SparseMatrix};
use crate::par;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("merged adjacency is not symmetric")]
    AsymmetricInput,
    #[error("block dimensions inconsistent: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Sizes of the three dense ID spaces and their global-coordinate offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeLayout {
    pub users: usize,
    pub questions: usize,
    pub answers: usize,
}

impl NodeLayout {
    pub fn of(corpus: &Corpus) -> Self {
        Self {
            users: corpus.num_users(),
            questions: corpus.num_questions(),
            answers: corpus.num_answers(),
        }
    }

    pub fn total(&self) -> usize {
        self.users + self.questions + self.answers
    }

    pub fn user(&self, u: u32) -> u32 {
        u
    }

    pub fn question(&self, q: u32) -> u32 {
        (self.users + q as usize) as u32
    }

    pub fn answer(&self, a: u32) -> u32 {
        (self.users + self.questions + a as usize) as u32
    }
}

/// Which graph blocks participate in the global merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphVariant {
    /// All four graphs (U-Q, U-A, Q-Q, Q-A).
    Full,
    /// Only the U-A bipartite graph.
    UaOnly,
    /// U-A plus U-Q, no semantic view.
    UaUq,
    /// Single U-A bipartite graph; answer embeddings absorb their question's
    /// embedding inside the model instead.
    MergedUaq,
}

impl GraphVariant {
    pub fn keeps_uq(&self) -> bool {
        matches!(self, GraphVariant::Full | GraphVariant::UaUq)
    }

    pub fn keeps_semantic_blocks(&self) -> bool {
        matches!(self, GraphVariant::Full)
    }
}

/// Whether the normalization degree counts nonzeros (the default) or sums
/// edge weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegreeMode {
    Count,
    Weighted,
}

#[derive(Clone, Copy, Debug)]
pub struct GraphConfig {
    /// Top-n ratio for the Q-Q graph: n = round(mu * N).
    pub mu: f64,
    pub variant: GraphVariant,
    pub symmetrize_qq: bool,
    pub degree_mode: DegreeMode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            mu: 1e-4,
            variant: GraphVariant::Full,
            symmetrize_qq: true,
            degree_mode: DegreeMode::Count,
        }
    }
}

/// The merged global graph, its normalization and degree table.
#[derive(Clone, Debug)]
pub struct GlobalGraph {
    pub adjacency: SparseMatrix,
    pub normalized: SparseMatrix,
    pub degree_counts: Vec<usize>,
    /// Embedding rows with zero norm encountered while building C (cosine
    /// treated as 0 for these).
    pub zero_norm_embeddings: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bipartite {
    Uq,
    Ua,
}

/// Unweighted symmetric bipartite block in global coordinates (weight 1 per
/// distinct observed pair, both directions).
pub fn build_bipartite(
    train: &[Interaction],
    layout: &NodeLayout,
    which: Bipartite,
) -> SparseMatrix {
    let total = layout.total();
    let mut pairs: HashSet<(u32, u32)> = HashSet::new();
    for it in train {
        let (a, b) = match which {
            Bipartite::Uq => (layout.user(it.user), layout.question(it.question)),
            Bipartite::Ua => (layout.user(it.user), layout.answer(it.answer)),
        };
        pairs.insert((a, b));
    }
    let mut triplets = Vec::with_capacity(pairs.len() * 2);
    for (a, b) in pairs {
        triplets.push((a, b, 1.0));
        triplets.push((b, a, 1.0));
    }
    SparseMatrix::from_triplets(total, total, triplets).expect("bipartite blocks are disjoint")
}

/// Q-A correlation block: normalized cosine `(cos+1)/2` on affiliation edges.
/// Zero-norm embedding rows count toward the returned warning counter and use
/// cosine 0 (weight 0.5).
pub fn build_correlation(
    embeddings: &DenseMatrix,
    affiliation: &[u32],
    layout: &NodeLayout,
) -> (SparseMatrix, usize) {
    let total = layout.total();
    let per_answer = par::map_indexed(affiliation.len(), |a| {
        let q = affiliation[a];
        let eq = embeddings.row(layout.question(q) as usize);
        let ea = embeddings.row(layout.answer(a as u32) as usize);
        match cosine(eq, ea) {
            Some(c) => ((c.clamp(-1.0, 1.0) + 1.0) / 2.0, false),
            None => (0.5, true),
        }
    });
    let mut triplets = Vec::with_capacity(per_answer.len() * 2);
    let mut zero_norm = 0;
    for (a, &(w, zero)) in per_answer.iter().enumerate() {
        if zero {
            zero_norm += 1;
        }
        let qi = layout.question(affiliation[a]);
        let ai = layout.answer(a as u32);
        triplets.push((qi, ai, w));
        triplets.push((ai, qi, w));
    }
    let m = SparseMatrix::from_triplets(total, total, triplets)
        .expect("one correlation edge per answer");
    (m, zero_norm)
}

/// Top-n most similar questions per question row (n = round(mu*N)), ties
/// broken by smaller index; optionally closed under symmetry (union).
pub fn build_qq(
    embeddings: &DenseMatrix,
    layout: &NodeLayout,
    mu: f64,
    symmetrize: bool,
) -> SparseMatrix {
    build_qq_impl(embeddings, layout, mu, symmetrize, false)
}

/// Sequential reference version of [`build_qq`]; exists for the bench suite.
pub fn build_qq_seq(
    embeddings: &DenseMatrix,
    layout: &NodeLayout,
    mu: f64,
    symmetrize: bool,
) -> SparseMatrix {
    build_qq_impl(embeddings, layout, mu, symmetrize, true)
}

fn build_qq_impl(
    embeddings: &DenseMatrix,
    layout: &NodeLayout,
    mu: f64,
    symmetrize: bool,
    sequential: bool,
) -> SparseMatrix {
    let total = layout.total();
    let nq = layout.questions;
    let n = (mu * nq as f64).round() as usize;
    if n == 0 || nq < 2 {
        return SparseMatrix::empty(total, total);
    }
    // Normalize question rows once; zero-norm rows get similarity 0 everywhere.
    let d = embeddings.cols();
    let mut unit = DenseMatrix::zeros(nq, d);
    for q in 0..nq {
        let row = embeddings.row(layout.question(q as u32) as usize);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (o, &v) in unit.row_mut(q).iter_mut().zip(row) {
                *o = v / norm;
            }
        }
    }
    let top = |i: usize| -> Vec<u32> {
        let anchor = unit.row(i);
        let mut scored: Vec<(f64, u32)> = (0..nq)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    crate::linalg::dot(anchor, unit.row(j)),
                    j as u32,
                )
            })
            .collect();
        let keep = n.min(scored.len());
        let by_sim_desc_then_index = |a: &(f64, u32), b: &(f64, u32)| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then(a.1.cmp(&b.1))
        };
        if keep < scored.len() {
            scored.select_nth_unstable_by(keep - 1, by_sim_desc_then_index);
            scored.truncate(keep);
        }
        scored.into_iter().map(|(_, j)| j).collect()
    };
    let neighbors: Vec<Vec<u32>> = if sequential {
        par::map_indexed_seq(nq, top)
    } else {
        par::map_indexed(nq, top)
    };
    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    for (i, row) in neighbors.iter().enumerate() {
        let gi = layout.question(i as u32);
        for &j in row {
            let gj = layout.question(j);
            edges.insert((gi, gj));
            if symmetrize {
                edges.insert((gj, gi));
            }
        }
    }
    let triplets = edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    SparseMatrix::from_triplets(total, total, triplets).expect("edge set is deduplicated")
}

/// Merge block matrices (already in global coordinates) into one adjacency.
/// The blocks each builder touches are disjoint, so duplicates indicate
/// caller error and surface as `SparseError::DuplicateEntry`.
pub fn assemble_adjacency(
    parts: &[&SparseMatrix],
    total: usize,
) -> Result<SparseMatrix, GraphError> {
    for p in parts {
        if p.rows() != total || p.cols() != total {
            return Err(GraphError::DimensionMismatch(format!(
                "block is {}x{}, expected {total}x{total}",
                p.rows(),
                p.cols()
            )));
        }
    }
    let triplets = parts.iter().flat_map(|p| p.triplets()).collect();
    let merged = SparseMatrix::from_triplets(total, total, triplets)?;
    if !merged.is_symmetric() {
        return Err(GraphError::AsymmetricInput);
    }
    Ok(merged)
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}` where `D_ii` is the nonzero
/// count (or weighted degree) of row `i`. Isolated rows stay all-zero.
pub fn normalize(adj: &SparseMatrix, mode: DegreeMode) -> (SparseMatrix, Vec<usize>) {
    let n = adj.rows();
    let counts: Vec<usize> = (0..n).map(|i| adj.row_nnz(i)).collect();
    let degrees: Vec<f64> = match mode {
        DegreeMode::Count => counts.iter().map(|&c| c as f64).collect(),
        DegreeMode::Weighted => (0..n)
            .map(|i| adj.row_entries(i).1.iter().sum::<f64>())
            .collect(),
    };
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let triplets = adj
        .triplets()
        .map(|(i, j, w)| (i, j, w * inv_sqrt[i as usize] * inv_sqrt[j as usize]))
        .collect();
    let normalized =
        SparseMatrix::from_triplets(n, n, triplets).expect("same sparsity pattern as input");
    (normalized, counts)
}

/// Merge the given blocks per the variant and normalize.
pub fn assemble_global(
    uq: &SparseMatrix,
    ua: &SparseMatrix,
    qq: &SparseMatrix,
    corr: &SparseMatrix,
    cfg: &GraphConfig,
    layout: &NodeLayout,
    zero_norm_embeddings: usize,
) -> Result<GlobalGraph, GraphError> {
    let mut parts: Vec<&SparseMatrix> = vec![ua];
    if cfg.variant.keeps_uq() {
        parts.push(uq);
    }
    if cfg.variant.keeps_semantic_blocks() {
        parts.push(qq);
        parts.push(corr);
    }
    let adjacency = assemble_adjacency(&parts, layout.total())?;
    let (normalized, degree_counts) = normalize(&adjacency, cfg.degree_mode);
    Ok(GlobalGraph {
        adjacency,
        normalized,
        degree_counts,
        zero_norm_embeddings,
    })
}

/// Rebuilds the embedding-dependent blocks each epoch; the collaborative
/// blocks are fixed by the train split.
pub struct GraphBuilder {
    layout: NodeLayout,
    cfg: GraphConfig,
    uq: SparseMatrix,
    ua: SparseMatrix,
    affiliation: Vec<u32>,
}

impl GraphBuilder {
    pub fn new(corpus: &Corpus, train: &[Interaction], cfg: GraphConfig) -> Self {
        let layout = NodeLayout::of(corpus);
        Self {
            layout,
            cfg,
            uq: build_bipartite(train, &layout, Bipartite::Uq),
            ua: build_bipartite(train, &layout, Bipartite::Ua),
            affiliation: corpus.affiliation().to_vec(),
        }
    }

    pub fn layout(&self) -> &NodeLayout {
        &self.layout
    }

    pub fn config(&self) -> &GraphConfig {
        &self.cfg
    }

    /// Build (or refresh) the global graph from the current embedding table.
    pub fn build(&self, embeddings: &DenseMatrix) -> Result<GlobalGraph, GraphError> {
        let total = self.layout.total();
        let (qq, corr, zero_norm) = if self.cfg.variant.keeps_semantic_blocks() {
            let (corr, zero_norm) =
                build_correlation(embeddings, &self.affiliation, &self.layout);
            let qq = build_qq(
                embeddings,
                &self.layout,
                self.cfg.mu,
                self.cfg.symmetrize_qq,
            );
            (qq, corr, zero_norm)
        } else {
            (
                SparseMatrix::empty(total, total),
                SparseMatrix::empty(total, total),
                0,
            )
        };
        if zero_norm > 0 {
            log::warn!("{zero_norm} zero-norm embedding rows in Q-A correlation");
        }
        assemble_global(
            &self.uq,
            &self.ua,
            &qq,
            &corr,
            &self.cfg,
            &self.layout,
            zero_norm,
        )
    }
}

/// Coordinate-list dump: `# nodes=<total> nnz=<count>` header then `i j w`
/// per entry.
pub fn dump_graph<W: std::io::Write>(g: &GlobalGraph, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "# nodes={} nnz={}", g.adjacency.rows(), g.adjacency.nnz())?;
    for (i, j, v) in g.adjacency.triplets() {
        writeln!(w, "{i} {j} {v}")?;
    }
    Ok(())
}
