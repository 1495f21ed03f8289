//! Dataset and spectrum diagnostics: eigenvalue-vs-test-projection scatter,
//! click-ratio histogram, and the four-group cosine similarity comparison.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusBuilder, CorpusError, Interaction};
use crate::graphs::{
    build_bipartite, build_correlation, build_qq, assemble_adjacency, normalize, Bipartite,
    GraphConfig, GraphError, NodeLayout,
};
use crate::linalg::{cosine, DenseMatrix, SparseMatrix};

/// Hard cap for dense eigendecomposition.
const MAX_DENSE_NODES: usize = 4000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("max_nodes {0} exceeds the dense eigendecomposition cap {MAX_DENSE_NODES}")]
    TooLarge(usize),
    #[error("eigendecomposition reconstruction error {0} exceeds 1e-8")]
    ReconstructionFailed(f64),
    #[error("missing or malformed vectors: {0}")]
    MissingVectors(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Pearson correlation; `None` when fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Eigenvalues of the normalized train adjacency paired with the diagonal of
/// `U^T A_test U`, plus per-band Pearson summaries.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub projections: Vec<f64>,
    /// Band `lambda > 0.8`.
    pub pearson_low: Option<f64>,
    /// Band `lambda < -0.8`.
    pub pearson_high: Option<f64>,
    /// Band `|lambda| <= 0.3`.
    pub pearson_mid: Option<f64>,
}

impl SpectralReport {
    /// Pearson over the eigenvalue band selected by `band`.
    pub fn pearson_band<F: Fn(f64) -> bool>(&self, band: F) -> Option<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (l, p) in self.eigenvalues.iter().zip(&self.projections) {
            if band(*l) {
                xs.push(*l);
                ys.push(*p);
            }
        }
        pearson(&xs, &ys)
    }

    /// Scatter TSV: `lambda projection` per line, band Pearsons as comments.
    pub fn write_scatter<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let fmt = |p: Option<f64>| p.map_or("nan".to_string(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "# pearson_low={} pearson_high={} pearson_mid={}",
            fmt(self.pearson_low),
            fmt(self.pearson_high),
            fmt(self.pearson_mid)
        )?;
        writeln!(w, "# lambda\tprojection")?;
        for (l, p) in self.eigenvalues.iter().zip(&self.projections) {
            writeln!(w, "{l:.10}\t{p:.10}")?;
        }
        Ok(())
    }
}

fn to_nalgebra(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

/// Dense symmetric eigendecomposition of the normalized train adjacency and
/// projection of the test adjacency onto its eigenvectors.
pub fn spectral_report(
    a_train_normalized: &SparseMatrix,
    a_test: &SparseMatrix,
) -> Result<SpectralReport, AnalysisError> {
    let n = a_train_normalized.rows();
    if n > MAX_DENSE_NODES {
        return Err(AnalysisError::TooLarge(n));
    }
    let dense = to_nalgebra(&a_train_normalized.to_dense());
    let eig = nalgebra::SymmetricEigen::new(dense.clone());
    // Reconstruction check guards against silently bad decompositions.
    let recon = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose();
    let err = (&recon - &dense).abs().max();
    if err > 1e-8 {
        return Err(AnalysisError::ReconstructionFailed(err));
    }
    // Columns of U in our row-major layout.
    let mut u = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            u.set(i, j, eig.eigenvectors[(i, j)]);
        }
    }
    let au = a_test.spmm(&u);
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let projections: Vec<f64> = (0..n)
        .map(|col| (0..n).map(|row| u.get(row, col) * au.get(row, col)).sum())
        .collect();
    let band = |pred: &dyn Fn(f64) -> bool| {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (l, p) in eigenvalues.iter().zip(&projections) {
            if pred(*l) {
                xs.push(*l);
                ys.push(*p);
            }
        }
        pearson(&xs, &ys)
    };
    Ok(SpectralReport {
        pearson_low: band(&|l| l > 0.8),
        pearson_high: band(&|l| l < -0.8),
        pearson_mid: band(&|l| l.abs() <= 0.3),
        eigenvalues,
        projections,
    })
}

/// Keep the densest `max_nodes`-node subgraph of the interaction structure by
/// iteratively peeling the lowest-degree node (ties: smallest node id).
/// Returns the surviving interactions.
fn peel_densest(corpus: &Corpus, max_nodes: usize) -> Vec<Interaction> {
    let layout = NodeLayout::of(corpus);
    let total = layout.total();
    if total <= max_nodes {
        return corpus.interactions().to_vec();
    }
    let interactions = corpus.interactions();
    let endpoints = |it: &Interaction| {
        [
            layout.user(it.user) as usize,
            layout.question(it.question) as usize,
            layout.answer(it.answer) as usize,
        ]
    };
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); total];
    let mut degree: Vec<usize> = vec![0; total];
    for (idx, it) in interactions.iter().enumerate() {
        for node in endpoints(it) {
            incident[node].push(idx);
            degree[node] += 1;
        }
    }
    let mut alive_node = vec![true; total];
    let mut alive_edge = vec![true; interactions.len()];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..total).map(|v| Reverse((degree[v], v))).collect();
    let mut remaining = total;
    while remaining > max_nodes {
        let Reverse((d, v)) = heap.pop().expect("heap tracks all alive nodes");
        if !alive_node[v] || d != degree[v] {
            continue; // stale entry
        }
        alive_node[v] = false;
        remaining -= 1;
        for &e in &incident[v] {
            if !alive_edge[e] {
                continue;
            }
            alive_edge[e] = false;
            for node in endpoints(&interactions[e]) {
                if node != v && alive_node[node] {
                    degree[node] -= 1;
                    heap.push(Reverse((degree[node], node)));
                }
            }
        }
    }
    interactions
        .iter()
        .zip(&alive_edge)
        .filter(|(_, &alive)| alive)
        .map(|(it, _)| *it)
        .collect()
}

/// Spectral heterophily diagnostic: subsample the densest interactions, split
/// them 8:2, build the normalized train adjacency and the unnormalized test
/// adjacency over the same node set, then eigen-analyze.
///
/// The embedding-dependent semantic blocks (Q-A correlation, Q-Q) enter only
/// the train side; the test side holds purely the held-out interactions.
pub fn spectral_analyze(
    corpus: &Corpus,
    embeddings: &DenseMatrix,
    graph_cfg: &GraphConfig,
    max_nodes: usize,
    seed: u64,
) -> Result<SpectralReport, AnalysisError> {
    if max_nodes > MAX_DENSE_NODES {
        return Err(AnalysisError::TooLarge(max_nodes));
    }
    let kept = peel_densest(corpus, max_nodes);
    // Re-index the survivors into a compact sub-corpus.
    let mut builder = CorpusBuilder::default();
    for it in &kept {
        builder.add_interaction(
            corpus.user_name(it.user),
            corpus.question_name(it.question),
            corpus.answer_name(it.answer),
        )?;
    }
    let sub = builder.finish()?;
    let sub_layout = NodeLayout::of(&sub);
    // Gather embedding rows for the survivors, in sub-corpus order.
    let d = embeddings.cols();
    let full_layout = NodeLayout::of(corpus);
    let mut sub_emb = DenseMatrix::zeros(sub_layout.total(), d);
    for u in 0..sub.num_users() as u32 {
        let orig = corpus.user_id(sub.user_name(u)).expect("survivor user");
        sub_emb
            .row_mut(sub_layout.user(u) as usize)
            .copy_from_slice(embeddings.row(full_layout.user(orig) as usize));
    }
    for q in 0..sub.num_questions() as u32 {
        let orig = corpus
            .question_id(sub.question_name(q))
            .expect("survivor question");
        sub_emb
            .row_mut(sub_layout.question(q) as usize)
            .copy_from_slice(embeddings.row(full_layout.question(orig) as usize));
    }
    for a in 0..sub.num_answers() as u32 {
        let orig = corpus.answer_id(sub.answer_name(a)).expect("survivor answer");
        sub_emb
            .row_mut(sub_layout.answer(a) as usize)
            .copy_from_slice(embeddings.row(full_layout.answer(orig) as usize));
    }
    // 8:2 split of the surviving interactions.
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sub.interactions().len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let n_train = (order.len() * 8) / 10;
    let train: Vec<Interaction> = order[..n_train]
        .iter()
        .map(|&i| sub.interactions()[i])
        .collect();
    let test: Vec<Interaction> = order[n_train..]
        .iter()
        .map(|&i| sub.interactions()[i])
        .collect();

    let total = sub_layout.total();
    let uq_train = build_bipartite(&train, &sub_layout, Bipartite::Uq);
    let ua_train = build_bipartite(&train, &sub_layout, Bipartite::Ua);
    let (corr, _) = build_correlation(&sub_emb, sub.affiliation(), &sub_layout);
    let qq = build_qq(&sub_emb, &sub_layout, graph_cfg.mu, graph_cfg.symmetrize_qq);
    let mut parts: Vec<&SparseMatrix> = vec![&uq_train, &ua_train];
    if graph_cfg.variant.keeps_semantic_blocks() {
        parts.push(&corr);
        parts.push(&qq);
    }
    let a_train = assemble_adjacency(&parts, total)?;
    let (a_train_norm, _) = normalize(&a_train, graph_cfg.degree_mode);

    let uq_test = build_bipartite(&test, &sub_layout, Bipartite::Uq);
    let ua_test = build_bipartite(&test, &sub_layout, Bipartite::Ua);
    let a_test = assemble_adjacency(&[&uq_test, &ua_test], total)?;

    spectral_report(&a_train_norm, &a_test)
}

/// Click-ratio distribution: for each qualifying question the fraction of its
/// answers that were ever clicked. Without exposure logs the qualification
/// threshold falls back to interaction counts (`proxy = true`).
#[derive(Clone, Debug)]
pub struct ClickRatioReport {
    pub ratios: Vec<(u32, f64)>,
    pub histogram: Vec<usize>,
    pub bins: usize,
    pub proxy: bool,
}

impl ClickRatioReport {
    /// TSV: `bin_left count` per line.
    pub fn write_histogram<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# proxy={} questions={}", self.proxy, self.ratios.len())?;
        writeln!(w, "# bin_left\tcount")?;
        for (i, c) in self.histogram.iter().enumerate() {
            writeln!(w, "{:.3}\t{}", i as f64 / self.bins as f64, c)?;
        }
        Ok(())
    }
}

pub fn click_ratio_analysis(
    corpus: &Corpus,
    min_exposures: usize,
    min_answers: usize,
    bins: usize,
) -> ClickRatioReport {
    let nq = corpus.num_questions();
    let mut answers_per_question: Vec<Vec<u32>> = vec![Vec::new(); nq];
    for (a, &q) in corpus.affiliation().iter().enumerate() {
        answers_per_question[q as usize].push(a as u32);
    }
    let mut clicked: HashSet<u32> = HashSet::new();
    let mut question_interactions = vec![0usize; nq];
    for it in corpus.interactions() {
        clicked.insert(it.answer);
        question_interactions[it.question as usize] += 1;
    }
    let mut ratios = Vec::new();
    let mut histogram = vec![0usize; bins];
    for q in 0..nq {
        let answers = &answers_per_question[q];
        if question_interactions[q] <= min_exposures || answers.len() <= min_answers {
            continue;
        }
        let n_clicked = answers.iter().filter(|a| clicked.contains(a)).count();
        let ratio = n_clicked as f64 / answers.len() as f64;
        let bin = ((ratio * bins as f64) as usize).min(bins - 1);
        histogram[bin] += 1;
        ratios.push((q as u32, ratio));
    }
    ClickRatioReport {
        ratios,
        histogram,
        bins,
        proxy: true,
    }
}

/// Mean cosine similarities of the four diagnostic groups.
#[derive(Clone, Debug)]
pub struct SimilarityGroups {
    /// Within question-answer pairs (all affiliation edges).
    pub wqa: f64,
    /// Between questions and unrelated answers (sampled).
    pub bqa: f64,
    /// Within each user's clicked questions (all intra-user pairs).
    pub weq: f64,
    /// Between clicked and unclicked questions (sampled).
    pub beq: f64,
    /// Pair counts per group, same order as the fields.
    pub counts: [usize; 4],
    /// Pairs dropped because one side had zero norm.
    pub skipped_zero_norm: usize,
}

impl SimilarityGroups {
    pub fn write_kv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (name, value, count) in [
            ("wqa", self.wqa, self.counts[0]),
            ("bqa", self.bqa, self.counts[1]),
            ("weq", self.weq, self.counts[2]),
            ("beq", self.beq, self.counts[3]),
        ] {
            writeln!(w, "{name}={value:.6} n_{name}={count}")?;
        }
        writeln!(w, "skipped_zero_norm={}", self.skipped_zero_norm)
    }
}

/// Load externally supplied vectors: lines `q <raw_id> <v1> <v2> ...` or
/// `a <raw_id> ...`, `#` comments allowed. Every question and answer of the
/// corpus must be covered and all rows must share one dimension.
pub fn load_vectors(
    path: &std::path::Path,
    corpus: &Corpus,
) -> Result<(DenseMatrix, DenseMatrix), AnalysisError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AnalysisError::MissingVectors(format!("{}: {e}", path.display())))?;
    let mut dim = None;
    let mut q_rows: Vec<Option<Vec<f64>>> = vec![None; corpus.num_questions()];
    let mut a_rows: Vec<Option<Vec<f64>>> = vec![None; corpus.num_answers()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let (kind, name) = match (tokens.next(), tokens.next()) {
            (Some(k), Some(n)) => (k, n),
            _ => {
                return Err(AnalysisError::MissingVectors(format!(
                    "line {}: expected `q|a <id> <floats>`",
                    lineno + 1
                )))
            }
        };
        let values: Vec<f64> = tokens
            .map(|t| {
                t.parse().map_err(|_| {
                    AnalysisError::MissingVectors(format!("line {}: bad float `{t}`", lineno + 1))
                })
            })
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(AnalysisError::MissingVectors(format!(
                "line {}: empty vector",
                lineno + 1
            )));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(AnalysisError::MissingVectors(format!(
                    "line {}: dimension {} != {}",
                    lineno + 1,
                    values.len(),
                    d
                )))
            }
            _ => {}
        }
        match kind {
            "q" => {
                let id = corpus.question_id(name).ok_or_else(|| {
                    AnalysisError::MissingVectors(format!("unknown question `{name}`"))
                })?;
                q_rows[id as usize] = Some(values);
            }
            "a" => {
                let id = corpus.answer_id(name).ok_or_else(|| {
                    AnalysisError::MissingVectors(format!("unknown answer `{name}`"))
                })?;
                a_rows[id as usize] = Some(values);
            }
            _ => {
                return Err(AnalysisError::MissingVectors(format!(
                    "line {}: kind must be `q` or `a`",
                    lineno + 1
                )))
            }
        }
    }
    let d = dim.ok_or_else(|| AnalysisError::MissingVectors("file holds no vectors".into()))?;
    let missing_q = q_rows.iter().filter(|r| r.is_none()).count();
    let missing_a = a_rows.iter().filter(|r| r.is_none()).count();
    if missing_q + missing_a > 0 {
        return Err(AnalysisError::MissingVectors(format!(
            "{missing_q} questions and {missing_a} answers lack vectors"
        )));
    }
    let collect = |rows: Vec<Option<Vec<f64>>>| {
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flat_map(|r| r.unwrap()).collect();
        DenseMatrix::from_vec(n, d, data)
    };
    Ok((collect(q_rows), collect(a_rows)))
}

/// Compare semantic similarity within and across question-answer structure.
/// `q_vectors` has one row per question, `a_vectors` one per answer (model
/// embeddings or externally supplied vectors).
pub fn similarity_group_analysis(
    q_vectors: &DenseMatrix,
    a_vectors: &DenseMatrix,
    corpus: &Corpus,
    samples: usize,
    seed: u64,
) -> Result<SimilarityGroups, AnalysisError> {
    let nq = corpus.num_questions();
    let no = corpus.num_answers();
    if q_vectors.rows() != nq || a_vectors.rows() != no {
        return Err(AnalysisError::MissingVectors(format!(
            "expected {nq} question and {no} answer vectors, got {} and {}",
            q_vectors.rows(),
            a_vectors.rows()
        )));
    }
    if q_vectors.cols() != a_vectors.cols() {
        return Err(AnalysisError::MissingVectors(format!(
            "dimension mismatch: {} vs {}",
            q_vectors.cols(),
            a_vectors.cols()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut skipped = 0usize;
    let mut add = |acc: &mut (f64, usize), c: Option<f64>| match c {
        Some(v) => {
            acc.0 += v;
            acc.1 += 1;
        }
        None => skipped += 1,
    };

    // wqa: every affiliation edge.
    let mut wqa = (0.0, 0usize);
    for (a, &q) in corpus.affiliation().iter().enumerate() {
        add(
            &mut wqa,
            cosine(q_vectors.row(q as usize), a_vectors.row(a)),
        );
    }
    // bqa: sampled unrelated question-answer pairs.
    let mut bqa = (0.0, 0usize);
    if nq > 1 {
        for _ in 0..samples {
            let a = rng.random_range(0..no);
            let q = loop {
                let q = rng.random_range(0..nq) as u32;
                if q != corpus.affiliation()[a] {
                    break q;
                }
            };
            add(
                &mut bqa,
                cosine(q_vectors.row(q as usize), a_vectors.row(a)),
            );
        }
    }
    // Clicked question sets, indexed by dense user id for determinism.
    let mut clicked: Vec<Vec<u32>> = vec![Vec::new(); corpus.num_users()];
    for it in corpus.interactions() {
        let qs = &mut clicked[it.user as usize];
        if !qs.contains(&it.question) {
            qs.push(it.question);
        }
    }
    // weq: all intra-user clicked-question pairs.
    let mut weq = (0.0, 0usize);
    for qs in &clicked {
        for (i, &qa) in qs.iter().enumerate() {
            for &qb in &qs[i + 1..] {
                add(
                    &mut weq,
                    cosine(q_vectors.row(qa as usize), q_vectors.row(qb as usize)),
                );
            }
        }
    }
    // beq: sampled clicked vs unclicked question pairs per user.
    let mut beq = (0.0, 0usize);
    let eligible: Vec<&Vec<u32>> = clicked
        .iter()
        .filter(|qs| !qs.is_empty() && qs.len() < nq)
        .collect();
    if !eligible.is_empty() {
        for _ in 0..samples {
            let qs = eligible[rng.random_range(0..eligible.len())];
            let qa = qs[rng.random_range(0..qs.len())];
            let qb = loop {
                let q = rng.random_range(0..nq) as u32;
                if !qs.contains(&q) {
                    break q;
                }
            };
            add(
                &mut beq,
                cosine(q_vectors.row(qa as usize), q_vectors.row(qb as usize)),
            );
        }
    }
    let mean = |(sum, n): (f64, usize)| if n > 0 { sum / n as f64 } else { 0.0 };
    Ok(SimilarityGroups {
        wqa: mean(wqa),
        bqa: mean(bqa),
        weq: mean(weq),
        beq: mean(beq),
        counts: [wqa.1, bqa.1, weq.1, beq.1],
        skipped_zero_norm: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    fn chain_graph(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n as u32 - 1 {
            t.push((i, i + 1, 1.0));
            t.push((i + 1, i, 1.0));
        }
        SparseMatrix::from_triplets(n, n, t).unwrap()
    }

    #[test]
    fn degenerate_self_test_has_unit_correlation() {
        let adj = chain_graph(8);
        let (norm, _) = normalize(&adj, crate::graphs::DegreeMode::Count);
        let report = spectral_report(&norm, &norm).unwrap();
        // Projections equal eigenvalues exactly.
        for (l, p) in report.eigenvalues.iter().zip(&report.projections) {
            assert!((l - p).abs() < 1e-9, "{l} vs {p}");
        }
        let all = report.pearson_band(|_| true).unwrap();
        assert!((all - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_test_adjacency_gives_zero_projections() {
        let adj = chain_graph(6);
        let (norm, _) = normalize(&adj, crate::graphs::DegreeMode::Count);
        let zero = SparseMatrix::empty(6, 6);
        let report = spectral_report(&norm, &zero).unwrap();
        for p in &report.projections {
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_basics() {
        assert!(pearson(&[1.0], &[2.0]).is_none());
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
        let p = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let p = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((p + 1.0).abs() < 1e-12);
    }

    #[test]
    fn click_ratio_hand_cases() {
        // 12-answer question with 3 clicked answers: ratio 0.25. The nine
        // unclicked answers exist only through their affiliation.
        let mut builder = CorpusBuilder::default();
        for a in 0..12 {
            builder.add_affiliation("q0", &format!("a{a}")).unwrap();
        }
        for a in 0..3 {
            for u in 0..4 {
                builder
                    .add_interaction(&format!("u{u}"), "q0", &format!("a{a}"))
                    .unwrap();
            }
        }
        let corpus = builder.finish().unwrap();
        let report = click_ratio_analysis(&corpus, 10, 10, 20);
        assert_eq!(report.ratios.len(), 1);
        assert_eq!(report.ratios[0].1, 0.25);
        assert_eq!(report.histogram[5], 1);
        // All-clicked question lands in the top bin.
        let mut builder = CorpusBuilder::default();
        for a in 0..11 {
            for u in 0..2 {
                builder
                    .add_interaction(&format!("u{u}"), "q0", &format!("a{a}"))
                    .unwrap();
            }
        }
        let full = builder.finish().unwrap();
        let report = click_ratio_analysis(&full, 10, 10, 20);
        assert_eq!(report.ratios[0].1, 1.0);
        assert_eq!(report.histogram[19], 1);
    }

    #[test]
    fn click_ratio_filters_small_questions() {
        let corpus =
            Corpus::ingest_tsv(BufReader::new("u0\tq0\ta0\nu1\tq0\ta0\n".as_bytes())).unwrap();
        let report = click_ratio_analysis(&corpus, 10, 10, 20);
        assert!(report.ratios.is_empty());
        assert!(report.proxy);
    }

    #[test]
    fn identical_vectors_give_unit_means() {
        let corpus = Corpus::ingest_tsv(BufReader::new(
            "u0\tq0\ta0\nu0\tq1\ta1\nu1\tq0\ta2\n".as_bytes(),
        ))
        .unwrap();
        let q = DenseMatrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        let a = DenseMatrix::from_vec(3, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let g = similarity_group_analysis(&q, &a, &corpus, 50, 1).unwrap();
        for v in [g.wqa, g.bqa, g.weq, g.beq] {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn orthogonal_random_vectors_have_near_zero_means() {
        use rand::Rng;
        let mut text = String::new();
        for u in 0..10 {
            for i in 0..6 {
                let a = (u * 6 + i) % 40;
                text.push_str(&format!("u{u}\tq{}\ta{a}\n", a % 12));
            }
        }
        let corpus = Corpus::ingest_tsv(BufReader::new(text.as_bytes())).unwrap();
        let d = 512;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut fill = |rows: usize| {
            let data: Vec<f64> = (0..rows * d).map(|_| rng.random::<f64>() - 0.5).collect();
            DenseMatrix::from_vec(rows, d, data)
        };
        let q = fill(corpus.num_questions());
        let a = fill(corpus.num_answers());
        let g = similarity_group_analysis(&q, &a, &corpus, 500, 2).unwrap();
        // Random d-dim cosines concentrate around 0 with sd ~ 1/sqrt(d).
        let bound = 3.0 / (d as f64).sqrt();
        for v in [g.wqa, g.bqa, g.weq, g.beq] {
            assert!(v.abs() < bound * 3.0, "{v} vs {bound}");
        }
    }

    #[test]
    fn group_means_invariant_under_rotation() {
        let corpus = Corpus::ingest_tsv(BufReader::new(
            "u0\tq0\ta0\nu0\tq1\ta1\nu1\tq2\ta2\nu1\tq0\ta3\n".as_bytes(),
        ))
        .unwrap();
        let d = 4;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        use rand::Rng;
        let mut fill = |rows: usize| {
            let data: Vec<f64> = (0..rows * d).map(|_| rng.random::<f64>() - 0.5).collect();
            DenseMatrix::from_vec(rows, d, data)
        };
        let q = fill(corpus.num_questions());
        let a = fill(corpus.num_answers());
        // Random rotation via QR of a random matrix.
        let raw = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let qr = raw.qr();
        let rot = qr.q();
        let rotate = |m: &DenseMatrix| {
            let mut out = DenseMatrix::zeros(m.rows(), d);
            for i in 0..m.rows() {
                for j in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += m.get(i, k) * rot[(k, j)];
                    }
                    out.set(i, j, s);
                }
            }
            out
        };
        let base = similarity_group_analysis(&q, &a, &corpus, 200, 7).unwrap();
        let rotated =
            similarity_group_analysis(&rotate(&q), &rotate(&a), &corpus, 200, 7).unwrap();
        assert!((base.wqa - rotated.wqa).abs() < 1e-9);
        assert!((base.bqa - rotated.bqa).abs() < 1e-9);
        assert!((base.weq - rotated.weq).abs() < 1e-9);
        assert!((base.beq - rotated.beq).abs() < 1e-9);
    }

    #[test]
    fn peeling_respects_max_nodes() {
        let mut text = String::new();
        // Dense core: 4 users x 6 answers on 2 questions, plus a sparse tail.
        for u in 0..4 {
            for a in 0..6 {
                text.push_str(&format!("core{u}\tq{}\ta{a}\n", a % 2));
            }
        }
        for i in 0..30 {
            text.push_str(&format!("tail{i}\ttq{i}\tta{i}\n"));
        }
        let corpus = Corpus::ingest_tsv(BufReader::new(text.as_bytes())).unwrap();
        let kept = peel_densest(&corpus, 12);
        let mut nodes: HashSet<(u8, u32)> = HashSet::new();
        for it in &kept {
            nodes.insert((0, it.user));
            nodes.insert((1, it.question));
            nodes.insert((2, it.answer));
        }
        assert!(nodes.len() <= 12);
        // The dense core survives.
        assert!(kept.iter().all(|it| corpus.user_name(it.user).starts_with("core")));
        assert!(!kept.is_empty());
    }
}
