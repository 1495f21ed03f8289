//! Trainable embedding table, noise augmentation, losses and exact gradients.
//!
//! The entire parameter set is one `(M+N+O) x d` matrix. A forward pass
//! propagates it through the polynomial filters, perturbs the band-stop
//! signals with sign-aligned uniform noise, scores BPR pairs on the augmented
//! final embeddings and contrasts the final embeddings against a fixed layer.
//! The backward pass exploits linearity of the propagation (the filters are
//! self-adjoint polynomials of a symmetric operator); noise and the sign
//! pattern inside it are treated as constants.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::corpus::NegativeSample;
use crate::graphs::{GlobalGraph, NodeLayout};
use crate::jacobi::{self, FilterConfig, PropagationOutput};
use crate::linalg::{dot, DenseMatrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("contrastive batch is empty")]
    EmptyBatch,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Filter(#[from] crate::jacobi::FilterError),
}

/// How the augmented band-pass embedding subtracts the noise: the verbatim
/// formulation removes it twice (`band_pass - 2*delta`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentationMode {
    Literal,
    SingleDelta,
}

impl AugmentationMode {
    fn pass_noise_factor(self) -> f64 {
        match self {
            AugmentationMode::Literal => 2.0,
            AugmentationMode::SingleDelta => 1.0,
        }
    }
}

/// Whether the InfoNCE denominator includes the positive pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClDenominator {
    IncludePositive,
    NegativesOnly,
}

/// Scope of the L2 penalty over the embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L2Mode {
    BatchRows,
    FullTable,
}

/// Loss weights and augmentation knobs.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Question weight in the prediction score.
    pub lambda1: f64,
    /// Contrastive loss weight.
    pub lambda2: f64,
    /// L2 regularization weight.
    pub lambda3: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Layer contrasted against the final embedding (1-based).
    pub contrast_layer: usize,
    /// Noise magnitude for the augmentation.
    pub noise_scale: f64,
    pub augmentation_mode: AugmentationMode,
    pub cl_denominator: ClDenominator,
    pub l2_mode: L2Mode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 1e-4,
            tau: 0.2,
            contrast_layer: 1,
            noise_scale: 0.2,
            augmentation_mode: AugmentationMode::Literal,
            cl_denominator: ClDenominator::IncludePositive,
            l2_mode: L2Mode::BatchRows,
        }
    }
}

/// Propagation backbone: polynomial filters, or plain adjacency powers
/// averaged over layers 0..=K (the filterless ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Propagation {
    Jacobi,
    PlainPowers,
}

/// Model-level switches derived from the run variant.
#[derive(Clone, Copy, Debug)]
pub struct ModelOptions {
    pub propagation: Propagation,
    /// Answer rows absorb their affiliated question's embedding before
    /// propagation (single-item ablation).
    pub merged_answers: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            propagation: Propagation::Jacobi,
            merged_answers: false,
        }
    }
}

/// The model's entire parameter set: one row per user, question and answer,
/// in graph coordinate order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: DenseMatrix,
    layout: NodeLayout,
}

impl EmbeddingTable {
    pub fn new(matrix: DenseMatrix, layout: NodeLayout) -> Self {
        assert_eq!(matrix.rows(), layout.total());
        Self { matrix, layout }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn layout(&self) -> &NodeLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut DenseMatrix {
        &mut self.matrix
    }

    /// Layer-0 embeddings fed to propagation. With merged answers, each
    /// answer row is the sum of its own row and its question's row.
    pub fn effective_e0(&self, merged_answers: bool, affiliation: &[u32]) -> DenseMatrix {
        let mut e0 = self.matrix.clone();
        if merged_answers {
            for (a, &q) in affiliation.iter().enumerate() {
                let q_row = self.matrix.row(self.layout.question(q) as usize).to_vec();
                let a_row = e0.row_mut(self.layout.answer(a as u32) as usize);
                for (o, v) in a_row.iter_mut().zip(q_row) {
                    *o += v;
                }
            }
        }
        e0
    }
}

/// Xavier-uniform initialization: entries from `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`, fan_in the embedding dimension and
/// fan_out the number of rows. Deterministic per seed.
pub fn init_embeddings(layout: NodeLayout, dim: usize, seed: u64) -> EmbeddingTable {
    use rand::SeedableRng;
    let rows = layout.total();
    let bound = (6.0 / (rows + dim) as f64).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..rows * dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    EmbeddingTable::new(DenseMatrix::from_vec(rows, dim, data), layout)
}

/// Clean and noise-augmented propagation outputs plus the noise itself.
#[derive(Clone, Debug)]
pub struct AugmentedOutput {
    pub clean: PropagationOutput,
    pub augmented: PropagationOutput,
    pub noise: Vec<DenseMatrix>,
}

/// Where augmentation noise comes from. Replay exists so finite-difference
/// oracles can hold the noise fixed while perturbing parameters.
pub enum NoiseSource<'a> {
    Zero,
    Rng(&'a mut ChaCha20Rng),
    Replay(&'a [DenseMatrix]),
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-layer noise `delta = eps * u (.) sign(band_stop)` with `u ~ U(0,1)`.
fn draw_noise(band_stop: &[DenseMatrix], eps: f64, source: &mut NoiseSource) -> Vec<DenseMatrix> {
    band_stop
        .iter()
        .enumerate()
        .map(|(k, stop)| match source {
            NoiseSource::Zero => DenseMatrix::zeros(stop.rows(), stop.cols()),
            NoiseSource::Replay(noise) => noise[k].clone(),
            NoiseSource::Rng(rng) => {
                let data = stop
                    .data()
                    .iter()
                    .map(|&e| eps * rng.random::<f64>() * sign(e))
                    .collect();
                DenseMatrix::from_vec(stop.rows(), stop.cols(), data)
            }
        })
        .collect()
}

/// Apply noise augmentation to a propagation output. `band_stop' = band_stop
/// + delta`; the band-pass side loses the noise once or twice depending on
/// the mode. Fresh noise per call unless replayed.
pub fn augment(
    prop: PropagationOutput,
    cfg: &LossConfig,
    mut source: NoiseSource,
) -> AugmentedOutput {
    if cfg.noise_scale == 0.0 {
        let noise = prop
            .band_stop
            .iter()
            .map(|s| DenseMatrix::zeros(s.rows(), s.cols()))
            .collect();
        return AugmentedOutput {
            augmented: prop.clone(),
            clean: prop,
            noise,
        };
    }
    let noise = draw_noise(&prop.band_stop, cfg.noise_scale, &mut source);
    let c_pass = cfg.augmentation_mode.pass_noise_factor();
    let band_stop: Vec<DenseMatrix> = prop
        .band_stop
        .iter()
        .zip(&noise)
        .map(|(s, d)| DenseMatrix::linear_combination(1.0, s, 1.0, d))
        .collect();
    let band_pass: Vec<DenseMatrix> = prop
        .band_pass
        .iter()
        .zip(&noise)
        .map(|(p, d)| DenseMatrix::linear_combination(1.0, p, -c_pass, d))
        .collect();
    let final_embeddings = jacobi::average_concat(&band_stop, &band_pass);
    AugmentedOutput {
        clean: prop,
        augmented: PropagationOutput {
            band_stop,
            band_pass,
            final_embeddings,
        },
        noise,
    }
}

/// Prediction score `y = e_u . e_a + lambda1 * e_u . e_q`.
pub fn predict(e_u: &[f64], e_q: &[f64], e_a: &[f64], lambda1: f64) -> f64 {
    dot(e_u, e_a) + lambda1 * dot(e_u, e_q)
}

/// Sigmoid argument clamp; beyond this the loss/gradient are numerically flat.
const SCORE_CLAMP: f64 = 40.0;

/// `-ln sigmoid(x)`, numerically stable, argument clamped to +-40.
fn neg_log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SCORE_CLAMP, SCORE_CLAMP);
    // softplus(-x) = max(-x, 0) + ln(1 + exp(-| -x |))
    let z = -x;
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise ranking loss: sum over pairs of `-ln sigmoid(pos - neg)`.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    debug_assert_eq!(pos_scores.len(), neg_scores.len());
    pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, &n)| neg_log_sigmoid(p - n))
        .sum()
}

/// Node groups (global row indices) the contrastive loss runs over: the
/// batch's users, questions and answers.
#[derive(Clone, Debug, Default)]
pub struct ContrastGroups {
    pub groups: [Vec<usize>; 3],
}

impl ContrastGroups {
    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(|g| g.is_empty())
    }
}

/// InfoNCE between final and layer-wise embeddings for one node group.
/// When `grads` is given, accumulates d/d(final) and d/d(layer) in-place
/// (unscaled; the caller applies loss weights).
fn contrastive_group(
    final_aug: &DenseMatrix,
    layer_aug: &DenseMatrix,
    group: &[usize],
    tau: f64,
    denominator: ClDenominator,
    mut grads: Option<(&mut DenseMatrix, &mut DenseMatrix)>,
) -> f64 {
    if group.len() < 2 && denominator == ClDenominator::NegativesOnly {
        // No negatives exist; fall back to the positive-only denominator,
        // which contributes exactly zero.
        return 0.0;
    }
    let mut loss = 0.0;
    for &i in group {
        let anchor = final_aug.row(i);
        let logits: Vec<f64> = group
            .iter()
            .map(|&j| dot(anchor, layer_aug.row(j)) / tau)
            .collect();
        let pos_idx = group.iter().position(|&j| j == i).expect("anchor in group");
        let pos = logits[pos_idx];
        let in_denominator = |idx: usize| match denominator {
            ClDenominator::IncludePositive => true,
            ClDenominator::NegativesOnly => idx != pos_idx,
        };
        let max_logit = logits
            .iter()
            .enumerate()
            .filter(|&(idx, _)| in_denominator(idx))
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom_sum: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(idx, _)| in_denominator(idx))
            .map(|(_, &l)| (l - max_logit).exp())
            .sum();
        let lse = max_logit + denom_sum.ln();
        loss += lse - pos;
        if let Some((g_final, g_layer)) = grads.as_mut() {
            // d/d(anchor): (sum_j p_j k_j - k_i) / tau
            // d/d(key_j):  (p_j - [j == i]) * anchor / tau
            for (idx, &j) in group.iter().enumerate() {
                let p = if in_denominator(idx) {
                    (logits[idx] - lse).exp()
                } else {
                    0.0
                };
                let indicator = if idx == pos_idx { 1.0 } else { 0.0 };
                let key = layer_aug.row(j);
                let ga = g_final.row_mut(i);
                for (o, &kv) in ga.iter_mut().zip(key) {
                    *o += p * kv / tau;
                }
                let gk = g_layer.row_mut(j);
                for (o, &av) in gk.iter_mut().zip(anchor) {
                    *o += (p - indicator) * av / tau;
                }
            }
            let key_i = layer_aug.row(i);
            let ga = g_final.row_mut(i);
            for (o, &kv) in ga.iter_mut().zip(key_i) {
                *o -= kv / tau;
            }
        }
    }
    loss
}

/// Cross-layer contrastive loss: the sum of the user, question and answer
/// InfoNCE terms.
pub fn contrastive_loss(
    final_aug: &DenseMatrix,
    layer_aug: &DenseMatrix,
    groups: &ContrastGroups,
    tau: f64,
    denominator: ClDenominator,
) -> Result<f64, ModelError> {
    if groups.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    Ok(groups
        .groups
        .iter()
        .map(|g| contrastive_group(final_aug, layer_aug, g, tau, denominator, None))
        .sum())
}

/// Squared L2 of the given table rows.
fn l2_term(table: &EmbeddingTable, rows: &[usize], mode: L2Mode) -> f64 {
    match mode {
        L2Mode::FullTable => table.matrix().data().iter().map(|v| v * v).sum(),
        L2Mode::BatchRows => rows
            .iter()
            .map(|&r| table.matrix().row(r).iter().map(|v| v * v).sum::<f64>())
            .sum(),
    }
}

/// Total training objective `L = L_BPR + lambda2 * L_C + lambda3 * ||Theta||^2`.
pub fn total_loss(bpr: f64, cl: f64, l2: f64, lambda2: f64, lambda3: f64) -> f64 {
    bpr + lambda2 * cl + lambda3 * l2
}

/// Unique node rows of a batch, split by role.
#[derive(Clone, Debug)]
pub struct BatchData {
    pub pairs: Vec<NegativeSample>,
    /// Global rows touched by scoring (users, both questions, both answers).
    pub touched_rows: Vec<usize>,
    /// Contrastive groups: unique users / positive questions / positive answers.
    pub contrast: ContrastGroups,
}

impl BatchData {
    pub fn new(pairs: Vec<NegativeSample>, layout: &NodeLayout) -> Self {
        let mut touched: Vec<usize> = Vec::with_capacity(pairs.len() * 5);
        let mut users = Vec::new();
        let mut questions = Vec::new();
        let mut answers = Vec::new();
        for p in &pairs {
            let u = layout.user(p.user) as usize;
            let qp = layout.question(p.pos_question) as usize;
            let ap = layout.answer(p.pos_answer) as usize;
            let qn = layout.question(p.neg_question) as usize;
            let an = layout.answer(p.neg_answer) as usize;
            touched.extend([u, qp, ap, qn, an]);
            users.push(u);
            questions.push(qp);
            answers.push(ap);
        }
        for v in [&mut touched, &mut users, &mut questions, &mut answers] {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            pairs,
            touched_rows: touched,
            contrast: ContrastGroups {
                groups: [users, questions, answers],
            },
        }
    }
}

/// Everything cached from one forward pass that the backward pass needs.
pub struct ForwardState {
    pub batch: BatchData,
    pub final_aug: DenseMatrix,
    pub layer_aug: DenseMatrix,
    pub noise: Vec<DenseMatrix>,
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
    pub loss_bpr: f64,
    pub loss_cl: f64,
    pub loss_l2: f64,
    pub loss_total: f64,
}

/// Plain-powers propagation (the filterless ablation): layers `A_hat^k E0`
/// for k = 0..=K, noise on layers k >= 1, final = mean over all layers.
fn plain_forward(
    graph: &GlobalGraph,
    e0: &DenseMatrix,
    layers: usize,
    cfg: &LossConfig,
    source: &mut NoiseSource,
) -> (DenseMatrix, DenseMatrix, Vec<DenseMatrix>) {
    let mut propagated = Vec::with_capacity(layers + 1);
    propagated.push(e0.clone());
    for k in 1..=layers {
        let next = graph.normalized.spmm(&propagated[k - 1]);
        propagated.push(next);
    }
    let noise = if cfg.noise_scale == 0.0 {
        propagated[1..]
            .iter()
            .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
            .collect()
    } else {
        draw_noise(&propagated[1..], cfg.noise_scale, source)
    };
    let augmented: Vec<DenseMatrix> = propagated
        .iter()
        .enumerate()
        .map(|(k, m)| {
            if k == 0 {
                m.clone()
            } else {
                DenseMatrix::linear_combination(1.0, m, 1.0, &noise[k - 1])
            }
        })
        .collect();
    let mut final_aug = DenseMatrix::zeros(e0.rows(), e0.cols());
    for layer in &augmented {
        final_aug.axpy(1.0 / (layers + 1) as f64, layer);
    }
    let l = cfg.contrast_layer.min(layers);
    let layer_aug = augmented[l].clone();
    (final_aug, layer_aug, noise)
}

/// One training forward pass over a batch of BPR pairs.
pub fn forward_batch(
    graph: &GlobalGraph,
    table: &EmbeddingTable,
    affiliation: &[u32],
    pairs: Vec<NegativeSample>,
    filter_cfg: &FilterConfig,
    loss_cfg: &LossConfig,
    opts: &ModelOptions,
    mut source: NoiseSource,
) -> Result<ForwardState, ModelError> {
    let layout = *table.layout();
    let batch = BatchData::new(pairs, &layout);
    let e0 = table.effective_e0(opts.merged_answers, affiliation);
    let (final_aug, layer_aug, noise) = match opts.propagation {
        Propagation::Jacobi => {
            let prop = jacobi::propagate(&graph.normalized, &e0, filter_cfg)?;
            let aug = augment(prop, loss_cfg, source);
            let l = loss_cfg.contrast_layer.clamp(1, filter_cfg.layers);
            let layer_aug = DenseMatrix::hconcat(
                &aug.augmented.band_stop[l - 1],
                &aug.augmented.band_pass[l - 1],
            );
            (aug.augmented.final_embeddings, layer_aug, aug.noise)
        }
        Propagation::PlainPowers => {
            plain_forward(graph, &e0, filter_cfg.layers, loss_cfg, &mut source)
        }
    };
    let score = |p: &NegativeSample, q: u32, a: u32| {
        predict(
            final_aug.row(layout.user(p.user) as usize),
            final_aug.row(layout.question(q) as usize),
            final_aug.row(layout.answer(a) as usize),
            loss_cfg.lambda1,
        )
    };
    let pos_scores: Vec<f64> = batch
        .pairs
        .iter()
        .map(|p| score(p, p.pos_question, p.pos_answer))
        .collect();
    let neg_scores: Vec<f64> = batch
        .pairs
        .iter()
        .map(|p| score(p, p.neg_question, p.neg_answer))
        .collect();
    let loss_bpr = bpr_loss(&pos_scores, &neg_scores);
    let loss_cl = if loss_cfg.lambda2 == 0.0 {
        0.0
    } else {
        contrastive_loss(
            &final_aug,
            &layer_aug,
            &batch.contrast,
            loss_cfg.tau,
            loss_cfg.cl_denominator,
        )?
    };
    let loss_l2 = l2_term(table, &batch.touched_rows, loss_cfg.l2_mode);
    let loss_total = total_loss(loss_bpr, loss_cl, loss_l2, loss_cfg.lambda2, loss_cfg.lambda3);
    Ok(ForwardState {
        batch,
        final_aug,
        layer_aug,
        noise,
        pos_scores,
        neg_scores,
        loss_bpr,
        loss_cl,
        loss_l2,
        loss_total,
    })
}

/// Gradient of the total loss with respect to the embedding table.
pub struct GradientSet {
    pub grad: DenseMatrix,
}

/// Exact gradient of the batch objective with respect to the raw table,
/// treating the drawn noise (and the sign pattern inside it) as constants.
pub fn backward(
    state: &ForwardState,
    graph: &GlobalGraph,
    table: &EmbeddingTable,
    affiliation: &[u32],
    filter_cfg: &FilterConfig,
    loss_cfg: &LossConfig,
    opts: &ModelOptions,
) -> Result<GradientSet, ModelError> {
    let layout = *table.layout();
    let width = state.final_aug.cols();
    let n = state.final_aug.rows();
    let mut g_final = DenseMatrix::zeros(n, width);
    let mut g_layer = DenseMatrix::zeros(n, width);

    // BPR term.
    for (idx, p) in state.batch.pairs.iter().enumerate() {
        let s = state.pos_scores[idx] - state.neg_scores[idx];
        let coeff = sigmoid(s) - 1.0;
        let u = layout.user(p.user) as usize;
        let qp = layout.question(p.pos_question) as usize;
        let ap = layout.answer(p.pos_answer) as usize;
        let qn = layout.question(p.neg_question) as usize;
        let an = layout.answer(p.neg_answer) as usize;
        let e_u = state.final_aug.row(u).to_vec();
        // d s / d e_u = (e_a+ + l1 e_q+) - (e_a- + l1 e_q-)
        {
            let (eap, eqp) = (state.final_aug.row(ap).to_vec(), state.final_aug.row(qp).to_vec());
            let (ean, eqn) = (state.final_aug.row(an).to_vec(), state.final_aug.row(qn).to_vec());
            let gu = g_final.row_mut(u);
            for j in 0..width {
                gu[j] += coeff
                    * ((eap[j] + loss_cfg.lambda1 * eqp[j]) - (ean[j] + loss_cfg.lambda1 * eqn[j]));
            }
        }
        for (row, scale) in [
            (ap, 1.0),
            (qp, loss_cfg.lambda1),
            (an, -1.0),
            (qn, -loss_cfg.lambda1),
        ] {
            let g = g_final.row_mut(row);
            for j in 0..width {
                g[j] += coeff * scale * e_u[j];
            }
        }
    }

    // Contrastive term, weighted by lambda2.
    if loss_cfg.lambda2 != 0.0 {
        let mut cf = DenseMatrix::zeros(n, width);
        let mut cl = DenseMatrix::zeros(n, width);
        for g in &state.batch.contrast.groups {
            contrastive_group(
                &state.final_aug,
                &state.layer_aug,
                g,
                loss_cfg.tau,
                loss_cfg.cl_denominator,
                Some((&mut cf, &mut cl)),
            );
        }
        g_final.axpy(loss_cfg.lambda2, &cf);
        g_layer.axpy(loss_cfg.lambda2, &cl);
    }

    // Pull the output-side gradients back to layer 0.
    let mut grad = match opts.propagation {
        Propagation::Jacobi => {
            let mut grad = jacobi::propagate_transpose(&graph.normalized, &g_final, filter_cfg)?;
            // Layer-l term: e^(l)' = [P_l E0 + noise | gamma E0 - P_l E0 - c*noise].
            let d = width / 2;
            let h_stop = g_layer.col_block(0, d);
            let h_pass = g_layer.col_block(d, width);
            let diff = DenseMatrix::linear_combination(1.0, &h_stop, -1.0, &h_pass);
            let terms = jacobi::band_stop_terms(&graph.normalized, &diff, filter_cfg)?;
            let l = loss_cfg.contrast_layer.clamp(1, filter_cfg.layers);
            grad.axpy(1.0, &terms[l - 1]);
            grad.axpy(filter_cfg.gamma, &h_pass);
            grad
        }
        Propagation::PlainPowers => {
            // final = (1/(K+1)) sum_k A^k E0; layer_l = A^l E0 (+ const noise).
            let k = filter_cfg.layers;
            let mut acc = g_final.clone();
            let mut cur = g_final.clone();
            for _ in 1..=k {
                cur = graph.normalized.spmm(&cur);
                acc.axpy(1.0, &cur);
            }
            acc.scale(1.0 / (k + 1) as f64);
            let l = loss_cfg.contrast_layer.min(k);
            let mut layer_grad = g_layer.clone();
            for _ in 0..l {
                layer_grad = graph.normalized.spmm(&layer_grad);
            }
            acc.axpy(1.0, &layer_grad);
            acc
        }
    };

    // Merged answers: the effective answer row is table[a] + table[q(a)],
    // so question rows also collect their answers' gradients.
    if opts.merged_answers {
        for (a, &q) in affiliation.iter().enumerate() {
            let a_grad = grad.row(layout.answer(a as u32) as usize).to_vec();
            let q_grad = grad.row_mut(layout.question(q) as usize);
            for (o, v) in q_grad.iter_mut().zip(a_grad) {
                *o += v;
            }
        }
    }

    // L2 term.
    match loss_cfg.l2_mode {
        L2Mode::BatchRows => {
            for &r in &state.batch.touched_rows {
                let src = table.matrix().row(r).to_vec();
                let dst = grad.row_mut(r);
                for (o, v) in dst.iter_mut().zip(src) {
                    *o += 2.0 * loss_cfg.lambda3 * v;
                }
            }
        }
        L2Mode::FullTable => {
            grad.axpy(2.0 * loss_cfg.lambda3, table.matrix());
        }
    }

    Ok(GradientSet { grad })
}

#[cfg(test)]
mod tests;
