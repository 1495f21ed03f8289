//! Full-ranking top-K evaluation: every non-excluded answer is scored for
//! each user and Recall/MRR/NDCG/Hit/Precision are averaged over users.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::corpus::{Corpus, Interaction};
use crate::graphs::NodeLayout;
use crate::linalg::DenseMatrix;
use crate::model::predict;
use crate::par;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no users are evaluable (no test positives among trained users)")]
    NoEvaluableUsers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Recall,
    Mrr,
    Ndcg,
    Hit,
    Precision,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Recall,
        Metric::Mrr,
        Metric::Ndcg,
        Metric::Hit,
        Metric::Precision,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
            Metric::Hit => "hit",
            Metric::Precision => "precision",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Aggregate metrics at cutoff `k`, averaged over evaluated users.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub hit: f64,
    pub precision: f64,
    pub num_users_evaluated: usize,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Recall => self.recall,
            Metric::Mrr => self.mrr,
            Metric::Ndcg => self.ndcg,
            Metric::Hit => self.hit,
            Metric::Precision => self.precision,
        }
    }

    /// Tab-separated table: metric names then values.
    pub fn to_tsv(&self) -> String {
        let header: Vec<String> = Metric::ALL
            .iter()
            .map(|m| format!("{}@{}", m.name(), self.k))
            .collect();
        let values: Vec<String> = Metric::ALL
            .iter()
            .map(|m| format!("{:.6}", self.get(*m)))
            .collect();
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }

    /// Machine-readable `key=value` block.
    pub fn to_kv(&self) -> String {
        let mut out = format!("k={}\nnum_users_evaluated={}\n", self.k, self.num_users_evaluated);
        for m in Metric::ALL {
            out.push_str(&format!("{}={:.10}\n", m.name(), self.get(m)));
        }
        out
    }
}

/// Per-user metric values at cutoff k.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UserMetrics {
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub hit: f64,
    pub precision: f64,
}

/// Metrics for one user given the top-k ranking prefix and the relevant set.
/// NDCG uses binary gains with a log2 discount; MRR is the reciprocal rank of
/// the first hit within the cutoff.
pub fn user_metrics(top_k: &[u32], relevant: &HashSet<u32>, k: usize) -> UserMetrics {
    debug_assert!(top_k.len() <= k);
    let mut hits = 0usize;
    let mut first_hit_rank = None;
    let mut dcg = 0.0;
    for (idx, a) in top_k.iter().enumerate() {
        if relevant.contains(a) {
            let rank = idx + 1;
            hits += 1;
            if first_hit_rank.is_none() {
                first_hit_rank = Some(rank);
            }
            dcg += 1.0 / ((rank + 1) as f64).log2();
        }
    }
    let ideal: f64 = (1..=relevant.len().min(k))
        .map(|r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    UserMetrics {
        recall: hits as f64 / relevant.len() as f64,
        mrr: first_hit_rank.map_or(0.0, |r| 1.0 / r as f64),
        ndcg: if ideal > 0.0 { dcg / ideal } else { 0.0 },
        hit: if hits > 0 { 1.0 } else { 0.0 },
        precision: hits as f64 / k as f64,
    }
}

/// One user's full candidate ranking and ground-truth set.
#[derive(Clone, Debug)]
pub struct UserRanking {
    pub user: u32,
    pub ranking: Vec<u32>,
    pub relevant: HashSet<u32>,
}

/// Average per-user metrics over users with at least one relevant item.
pub fn compute_metrics(rankings: &[UserRanking], k: usize) -> Result<MetricsReport, EvalError> {
    let mut sums = UserMetrics::default();
    let mut evaluated = 0usize;
    for entry in rankings {
        if entry.relevant.is_empty() {
            continue;
        }
        let cut = entry.ranking.len().min(k);
        let m = user_metrics(&entry.ranking[..cut], &entry.relevant, k);
        sums.recall += m.recall;
        sums.mrr += m.mrr;
        sums.ndcg += m.ndcg;
        sums.hit += m.hit;
        sums.precision += m.precision;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(EvalError::NoEvaluableUsers);
    }
    let n = evaluated as f64;
    Ok(MetricsReport {
        k,
        recall: sums.recall / n,
        mrr: sums.mrr / n,
        ndcg: sums.ndcg / n,
        hit: sums.hit / n,
        precision: sums.precision / n,
        num_users_evaluated: evaluated,
    })
}

/// Expected MRR@k of a uniformly random ranking of `n` candidates of which
/// `t` are relevant: sum over ranks r of P(first hit at r) / r.
pub fn random_ranking_mrr_expectation(n: usize, t: usize, k: usize) -> f64 {
    if t == 0 || n == 0 {
        return 0.0;
    }
    let mut p_no_hit_yet = 1.0;
    let mut expectation = 0.0;
    for r in 1..=k.min(n) {
        let remaining = (n - r + 1) as f64;
        let p_hit = (t as f64 / remaining).min(1.0);
        expectation += p_no_hit_yet * p_hit / r as f64;
        p_no_hit_yet *= 1.0 - p_hit;
        if p_no_hit_yet <= 0.0 {
            break;
        }
    }
    expectation
}

fn score_answer(
    final_clean: &DenseMatrix,
    layout: &NodeLayout,
    affiliation: &[u32],
    lambda1: f64,
    user: u32,
    answer: u32,
) -> f64 {
    let e_u = final_clean.row(layout.user(user) as usize);
    let e_a = final_clean.row(layout.answer(answer) as usize);
    let e_q = final_clean.row(layout.question(affiliation[answer as usize]) as usize);
    predict(e_u, e_q, e_a, lambda1)
}

/// Score every non-excluded answer for `user` and return the full ranking,
/// descending score with ties broken by answer index.
pub fn rank_candidates(
    user: u32,
    final_clean: &DenseMatrix,
    layout: &NodeLayout,
    affiliation: &[u32],
    lambda1: f64,
    exclusions: &HashSet<u32>,
) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = (0..affiliation.len() as u32)
        .filter(|a| !exclusions.contains(a))
        .map(|a| {
            (
                score_answer(final_clean, layout, affiliation, lambda1, user, a),
                a,
            )
        })
        .collect();
    scored.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("scores are finite")
            .then(a.1.cmp(&b.1))
    });
    scored.into_iter().map(|(_, a)| a).collect()
}

/// Top-k prefix of [`rank_candidates`] without materializing the full sort.
fn top_k_candidates(
    user: u32,
    final_clean: &DenseMatrix,
    layout: &NodeLayout,
    affiliation: &[u32],
    lambda1: f64,
    exclusions: &HashSet<u32>,
    k: usize,
) -> Vec<u32> {
    // "a better than b" under the ranking's total order.
    let better = |a: &(f64, u32), b: &(f64, u32)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    for a in 0..affiliation.len() as u32 {
        if exclusions.contains(&a) {
            continue;
        }
        let s = score_answer(final_clean, layout, affiliation, lambda1, user, a);
        if best.len() == k {
            if let Some(last) = best.last() {
                if !better(&(s, a), last) {
                    continue;
                }
            }
        }
        let pos = best.partition_point(|e| better(e, &(s, a)));
        best.insert(pos, (s, a));
        best.truncate(k);
    }
    best.into_iter().map(|(_, a)| a).collect()
}

fn evaluate_ranking_impl(
    final_clean: &DenseMatrix,
    layout: &NodeLayout,
    corpus: &Corpus,
    truth_split: &[Interaction],
    train: &[Interaction],
    extra_exclude: Option<&[Interaction]>,
    lambda1: f64,
    k: usize,
    sequential: bool,
) -> Result<MetricsReport, EvalError> {
    let mut truth: HashMap<u32, HashSet<u32>> = HashMap::new();
    for it in truth_split {
        truth.entry(it.user).or_default().insert(it.answer);
    }
    let mut exclusions: HashMap<u32, HashSet<u32>> = HashMap::new();
    let mut trained_users: HashSet<u32> = HashSet::new();
    for it in train {
        exclusions.entry(it.user).or_default().insert(it.answer);
        trained_users.insert(it.user);
    }
    if let Some(extra) = extra_exclude {
        for it in extra {
            exclusions.entry(it.user).or_default().insert(it.answer);
        }
    }
    let mut users: Vec<u32> = truth
        .keys()
        .copied()
        .filter(|u| trained_users.contains(u))
        .collect();
    users.sort_unstable();
    let empty = HashSet::new();
    let affiliation = corpus.affiliation();
    let one_user = |idx: usize| {
        let u = users[idx];
        let excl = exclusions.get(&u).unwrap_or(&empty);
        let top = top_k_candidates(u, final_clean, layout, affiliation, lambda1, excl, k);
        user_metrics(&top, &truth[&u], k)
    };
    let per_user: Vec<UserMetrics> = if sequential {
        par::map_indexed_seq(users.len(), one_user)
    } else {
        par::map_indexed(users.len(), one_user)
    };
    if per_user.is_empty() {
        return Err(EvalError::NoEvaluableUsers);
    }
    let n = per_user.len() as f64;
    let mut sums = UserMetrics::default();
    for m in &per_user {
        sums.recall += m.recall;
        sums.mrr += m.mrr;
        sums.ndcg += m.ndcg;
        sums.hit += m.hit;
        sums.precision += m.precision;
    }
    Ok(MetricsReport {
        k,
        recall: sums.recall / n,
        mrr: sums.mrr / n,
        ndcg: sums.ndcg / n,
        hit: sums.hit / n,
        precision: sums.precision / n,
        num_users_evaluated: per_user.len(),
    })
}

/// Full-ranking evaluation of `truth_split` against a clean embedding table.
/// Each user's exclusion set is their train positives plus `extra_exclude`
/// positives (validation, when testing). Users without train interactions are
/// skipped: their embeddings never received collaborative signal.
pub fn evaluate_ranking(
    final_clean: &DenseMatrix,
    layout: &NodeLayout,
    corpus: &Corpus,
    truth_split: &[Interaction],
    train: &[Interaction],
    extra_exclude: Option<&[Interaction]>,
    lambda1: f64,
    k: usize,
) -> Result<MetricsReport, EvalError> {
    evaluate_ranking_impl(
        final_clean,
        layout,
        corpus,
        truth_split,
        train,
        extra_exclude,
        lambda1,
        k,
        false,
    )
}

/// Sequential twin of [`evaluate_ranking`] for the bench suite.
pub fn evaluate_ranking_seq(
    final_clean: &DenseMatrix,
    layout: &NodeLayout,
    corpus: &Corpus,
    truth_split: &[Interaction],
    train: &[Interaction],
    extra_exclude: Option<&[Interaction]>,
    lambda1: f64,
    k: usize,
) -> Result<MetricsReport, EvalError> {
    evaluate_ranking_impl(
        final_clean,
        layout,
        corpus,
        truth_split,
        train,
        extra_exclude,
        lambda1,
        k,
        true,
    )
}
