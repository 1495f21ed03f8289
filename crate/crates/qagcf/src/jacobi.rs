//! Jacobi-polynomial band-stop/band-pass filtering of node embeddings.
//!
//! The band-stop signal of layer `k` is `P_k(A_hat) * E0`, evaluated with the
//! three-term recurrence lifted to matrix form; `P_k(A_hat)` itself is never
//! materialized, only the two most recent propagated matrices are kept. The
//! band-pass signal is the mid-frequency remainder `gamma*E0 - band_stop[k]`.

use thiserror::Error;

use crate::linalg::{DenseMatrix, SparseMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("filter config invalid: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: graph has {nodes} nodes, embeddings have {rows} rows")]
    DimensionMismatch { nodes: usize, rows: usize },
}

/// Shape parameters of the polynomial filter bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub layers: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.5,
            gamma: 0.1,
            layers: 3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.alpha <= -1.0 || self.beta <= -1.0 {
            return Err(FilterError::InvalidConfig(format!(
                "alpha and beta must exceed -1 (got alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.layers == 0 {
            return Err(FilterError::InvalidConfig("layers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-layer filtered embeddings plus their averaged concatenation.
///
/// `band_stop[k-1]` holds layer `k` for `k = 1..=K`; layer 0 is excluded from
/// the average. `final_embeddings` is `(1/K) * sum_k [stop_k | pass_k]`, twice
/// as wide as the input.
#[derive(Clone, Debug)]
pub struct PropagationOutput {
    pub band_stop: Vec<DenseMatrix>,
    pub band_pass: Vec<DenseMatrix>,
    pub final_embeddings: DenseMatrix,
}

/// Recurrence coefficients for order `k >= 2`.
fn recurrence_coefficients(k: usize, alpha: f64, beta: f64) -> (f64, f64, f64) {
    let k = k as f64;
    let s = alpha + beta;
    let theta = (2.0 * k + s) * (2.0 * k + s - 1.0) / (2.0 * k * (k + s));
    let theta_p =
        (2.0 * k + s - 1.0) * (alpha * alpha - beta * beta) / (2.0 * k * (k + s) * (2.0 * k + s - 2.0));
    let theta_pp =
        (k + alpha - 1.0) * (k + beta - 1.0) * (2.0 * k + s) / (k * (k + s) * (2.0 * k + s - 2.0));
    (theta, theta_p, theta_pp)
}

/// Evaluate the Jacobi polynomial `P_k^{alpha,beta}(x)` by recurrence.
pub fn jacobi_scalar(k: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = ((alpha + beta + 2.0) * x + (alpha - beta)) / 2.0;
    for order in 2..=k {
        let (theta, theta_p, theta_pp) = recurrence_coefficients(order, alpha, beta);
        let next = (theta * x + theta_p) * cur - theta_pp * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `P_k(adj) * x` for `k = 1..=layers`, sharing the rolling recurrence state.
pub fn band_stop_terms(
    adj: &SparseMatrix,
    x: &DenseMatrix,
    cfg: &FilterConfig,
) -> Result<Vec<DenseMatrix>, FilterError> {
    cfg.validate()?;
    if adj.rows() != x.rows() {
        return Err(FilterError::DimensionMismatch {
            nodes: adj.rows(),
            rows: x.rows(),
        });
    }
    let mut terms = Vec::with_capacity(cfg.layers);
    // P1(A)x = ((a+b+2)/2) A x + ((a-b)/2) x
    let ax = adj.spmm(x);
    let p1 = DenseMatrix::linear_combination(
        (cfg.alpha + cfg.beta + 2.0) / 2.0,
        &ax,
        (cfg.alpha - cfg.beta) / 2.0,
        x,
    );
    terms.push(p1);
    for k in 2..=cfg.layers {
        let (theta, theta_p, theta_pp) = recurrence_coefficients(k, cfg.alpha, cfg.beta);
        let next = {
            let cur = &terms[k - 2];
            let prev = if k == 2 { x } else { &terms[k - 3] };
            let a_cur = adj.spmm(cur);
            let mut next = DenseMatrix::linear_combination(theta, &a_cur, theta_p, cur);
            next.axpy(-theta_pp, prev);
            next
        };
        terms.push(next);
    }
    Ok(terms)
}

/// Forward filter pass: band-stop and band-pass signals for every layer plus
/// their layer-averaged concatenation.
pub fn propagate(
    adj: &SparseMatrix,
    e0: &DenseMatrix,
    cfg: &FilterConfig,
) -> Result<PropagationOutput, FilterError> {
    let band_stop = band_stop_terms(adj, e0, cfg)?;
    let band_pass: Vec<DenseMatrix> = band_stop
        .iter()
        .map(|stop| DenseMatrix::linear_combination(cfg.gamma, e0, -1.0, stop))
        .collect();
    let final_embeddings = average_concat(&band_stop, &band_pass);
    Ok(PropagationOutput {
        band_stop,
        band_pass,
        final_embeddings,
    })
}

/// `(1/K) * sum_k [stop_k | pass_k]`.
pub fn average_concat(stop: &[DenseMatrix], pass: &[DenseMatrix]) -> DenseMatrix {
    let k = stop.len();
    let d = stop[0].cols();
    let rows = stop[0].rows();
    let mut out = DenseMatrix::zeros(rows, 2 * d);
    let inv_k = 1.0 / k as f64;
    for layer in 0..k {
        let (s, p) = (&stop[layer], &pass[layer]);
        for i in 0..rows {
            let row = out.row_mut(i);
            for (j, &v) in s.row(i).iter().enumerate() {
                row[j] += inv_k * v;
            }
            for (j, &v) in p.row(i).iter().enumerate() {
                row[d + j] += inv_k * v;
            }
        }
    }
    out
}

/// Adjoint of the map `E0 -> final_embeddings` under the Frobenius inner
/// product. `grad` has the shape of `final_embeddings` (width `2d`); the
/// result has the shape of `E0`. Because `A_hat` is symmetric, every
/// `P_k(A_hat)` is self-adjoint and the forward recurrence is reused on the
/// output-side gradient.
pub fn propagate_transpose(
    adj: &SparseMatrix,
    grad: &DenseMatrix,
    cfg: &FilterConfig,
) -> Result<DenseMatrix, FilterError> {
    cfg.validate()?;
    if grad.cols() % 2 != 0 {
        return Err(FilterError::InvalidConfig(
            "gradient width must be even (stop/pass halves)".into(),
        ));
    }
    let d = grad.cols() / 2;
    let g_stop = grad.col_block(0, d);
    let g_pass = grad.col_block(d, 2 * d);
    // final_stop = Q(A) E0 with Q = (1/K) sum_k P_k, final_pass = gamma*E0 - Q(A) E0,
    // so the adjoint is Q(A)(G_s - G_p) + gamma * G_p.
    let diff = DenseMatrix::linear_combination(1.0, &g_stop, -1.0, &g_pass);
    let terms = band_stop_terms(adj, &diff, cfg)?;
    let mut out = DenseMatrix::zeros(grad.rows(), d);
    for t in &terms {
        out.axpy(1.0 / terms.len() as f64, t);
    }
    out.axpy(cfg.gamma, &g_pass);
    Ok(out)
}
