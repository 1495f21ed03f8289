//! Adam with sparse-row semantics: rows whose batch gradient is entirely
//! zero keep their moment state untouched.

use crate::linalg::DenseMatrix;

use super::EmbeddingTable;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the global step counter used for bias
/// correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: DenseMatrix,
    pub v: DenseMatrix,
    pub step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
            step: 0,
        }
    }
}

/// One Adam update. Rows with an all-zero gradient are skipped entirely.
pub fn adam_step(
    table: &mut EmbeddingTable,
    grad: &DenseMatrix,
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    assert_eq!(grad.rows(), table.matrix().rows());
    assert_eq!(grad.cols(), table.matrix().cols());
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    let cols = grad.cols();
    for row in 0..grad.rows() {
        let g = grad.row(row);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let m = state.m.row_mut(row);
        let v = state.v.row_mut(row);
        let target = table.matrix_mut().row_mut(row);
        for j in 0..cols {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            target[j] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::NodeLayout;

    fn scalar_table() -> EmbeddingTable {
        let layout = NodeLayout {
            users: 1,
            questions: 0,
            answers: 0,
        };
        EmbeddingTable::new(DenseMatrix::from_vec(1, 1, vec![0.0]), layout)
    }

    #[test]
    fn zero_gradient_leaves_table_and_state_unchanged() {
        let mut table = scalar_table();
        let mut state = AdamState::new(1, 1);
        let before = table.clone();
        adam_step(
            &mut table,
            &DenseMatrix::zeros(1, 1),
            &mut state,
            &AdamHyper::default(),
        );
        assert_eq!(table, before);
        assert_eq!(state.m, DenseMatrix::zeros(1, 1));
        assert_eq!(state.v, DenseMatrix::zeros(1, 1));
    }

    #[test]
    fn first_step_is_bias_corrected_learning_rate() {
        // g = 1 constant: m_hat = 1, v_hat = 1, step = -lr / (1 + eps).
        let mut table = scalar_table();
        let mut state = AdamState::new(1, 1);
        let hyper = AdamHyper {
            learning_rate: 0.1,
            ..AdamHyper::default()
        };
        let grad = DenseMatrix::from_vec(1, 1, vec![1.0]);
        adam_step(&mut table, &grad, &mut state, &hyper);
        let got = table.matrix().get(0, 0);
        assert!((got + 0.1).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn moments_decay_with_default_betas() {
        let mut table = scalar_table();
        let mut state = AdamState::new(1, 1);
        let hyper = AdamHyper::default();
        let grad = DenseMatrix::from_vec(1, 1, vec![2.0]);
        adam_step(&mut table, &grad, &mut state, &hyper);
        assert!((state.m.get(0, 0) - 0.1 * 2.0).abs() < 1e-12);
        assert!((state.v.get(0, 0) - 0.001 * 4.0).abs() < 1e-12);
        let grad2 = DenseMatrix::from_vec(1, 1, vec![0.5]);
        adam_step(&mut table, &grad2, &mut state, &hyper);
        assert!((state.m.get(0, 0) - (0.9 * 0.2 + 0.1 * 0.5)).abs() < 1e-12);
        assert!((state.v.get(0, 0) - (0.999 * 0.004 + 0.001 * 0.25)).abs() < 1e-12);
    }
}
