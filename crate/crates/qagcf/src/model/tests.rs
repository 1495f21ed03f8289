use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::corpus::{Corpus, NegativeSampler};
use crate::graphs::{GraphBuilder, GraphConfig, GraphVariant};

fn tiny_corpus() -> Corpus {
    // M=3, N=4, O=5.
    let text = "u0\tq0\ta0\nu0\tq1\ta1\nu1\tq2\ta2\nu1\tq3\ta3\nu2\tq0\ta4\nu2\tq1\ta1\n";
    Corpus::ingest_tsv(BufReader::new(text.as_bytes())).unwrap()
}

fn tiny_setup(
    seed: u64,
    variant: GraphVariant,
) -> (Corpus, EmbeddingTable, GlobalGraph, Vec<NegativeSample>) {
    let corpus = tiny_corpus();
    let layout = crate::graphs::NodeLayout::of(&corpus);
    let table = init_embeddings(layout, 4, seed);
    let cfg = GraphConfig {
        mu: 0.5,
        variant,
        ..GraphConfig::default()
    };
    let graph = GraphBuilder::new(&corpus, corpus.interactions(), cfg)
        .build(table.matrix())
        .unwrap();
    let sampler = NegativeSampler::new(&corpus, corpus.interactions());
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let pairs = sampler
        .sample_batch(corpus.interactions(), &mut rng)
        .unwrap();
    (corpus, table, graph, pairs)
}

#[test]
fn init_is_deterministic_with_xavier_variance() {
    let layout = crate::graphs::NodeLayout {
        users: 1000,
        questions: 600,
        answers: 400,
    };
    let a = init_embeddings(layout, 50, 3);
    let b = init_embeddings(layout, 50, 3);
    assert_eq!(a, b);
    let data = a.matrix().data();
    assert_eq!(data.len(), 100_000);
    let mean: f64 = data.iter().sum::<f64>() / data.len() as f64;
    let var: f64 = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64;
    let expected = 2.0 / (2000.0 + 50.0);
    assert!(
        (var - expected).abs() < 0.1 * expected,
        "var {var} vs {expected}"
    );
}

#[test]
fn predict_hand_values() {
    let y = predict(&[1.0, 0.0], &[1.0, 1.0], &[0.5, 0.0], 0.1);
    assert!((y - 0.6).abs() < 1e-12);
    // lambda1 = 0: question has no influence.
    let y0 = predict(&[1.0, 0.0], &[9.0, 9.0], &[0.5, 0.0], 0.0);
    assert!((y0 - 0.5).abs() < 1e-12);
}

#[test]
fn bpr_hand_values() {
    let ln2 = std::f64::consts::LN_2;
    assert!((bpr_loss(&[1.0], &[1.0]) - ln2).abs() < 1e-12);
    let v = bpr_loss(&[1.0], &[0.0]);
    assert!((v - 0.31326168751822286).abs() < 1e-12);
    assert!(bpr_loss(&[1e6], &[0.0]) < 1e-15);
    assert!((bpr_loss(&[0.0], &[1e6]) - SCORE_CLAMP).abs() < 1e-9);
}

#[test]
fn augment_eps_zero_is_identity() {
    let (_, table, graph, _) = tiny_setup(1, GraphVariant::Full);
    let prop = jacobi::propagate(&graph.normalized, table.matrix(), &FilterConfig::default())
        .unwrap();
    let cfg = LossConfig {
        noise_scale: 0.0,
        ..LossConfig::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let aug = augment(prop, &cfg, NoiseSource::Rng(&mut rng));
    for k in 0..aug.clean.band_stop.len() {
        assert_eq!(aug.clean.band_stop[k], aug.augmented.band_stop[k]);
        assert_eq!(aug.clean.band_pass[k], aug.augmented.band_pass[k]);
    }
    assert_eq!(aug.clean.final_embeddings, aug.augmented.final_embeddings);
}

#[test]
fn augment_noise_bounds_and_pass_rule() {
    let (_, table, graph, _) = tiny_setup(2, GraphVariant::Full);
    let fcfg = FilterConfig::default();
    let prop = jacobi::propagate(&graph.normalized, table.matrix(), &fcfg).unwrap();
    let eps = 0.2;
    let cfg = LossConfig {
        noise_scale: eps,
        ..LossConfig::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let aug = augment(prop, &cfg, NoiseSource::Rng(&mut rng));
    for k in 0..fcfg.layers {
        let delta = &aug.noise[k];
        assert!(delta.max_abs() <= eps);
        // Noise is sign-aligned with the band-stop signal.
        for (d, e) in delta.data().iter().zip(aug.clean.band_stop[k].data()) {
            if *e != 0.0 {
                assert!(d * e >= 0.0);
            }
        }
        // stop' - stop = delta, pass' = pass - 2*delta (verbatim rule).
        let stop_diff = DenseMatrix::linear_combination(
            1.0,
            &aug.augmented.band_stop[k],
            -1.0,
            &aug.clean.band_stop[k],
        );
        assert!(stop_diff.max_abs_diff(delta) < 1e-12);
        let mut expected_pass = aug.clean.band_pass[k].clone();
        expected_pass.axpy(-2.0, delta);
        assert!(aug.augmented.band_pass[k].max_abs_diff(&expected_pass) < 1e-12);
    }
    // Overall perturbation of the final embedding is within 3*eps.
    let diff = aug
        .augmented
        .final_embeddings
        .max_abs_diff(&aug.clean.final_embeddings);
    assert!(diff <= 3.0 * eps);
}

#[test]
fn augment_single_delta_mode() {
    let (_, table, graph, _) = tiny_setup(3, GraphVariant::Full);
    let prop = jacobi::propagate(&graph.normalized, table.matrix(), &FilterConfig::default())
        .unwrap();
    let cfg = LossConfig {
        noise_scale: 0.3,
        augmentation_mode: AugmentationMode::SingleDelta,
        ..LossConfig::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let aug = augment(prop, &cfg, NoiseSource::Rng(&mut rng));
    for k in 0..aug.noise.len() {
        let mut expected = aug.clean.band_pass[k].clone();
        expected.axpy(-1.0, &aug.noise[k]);
        assert!(aug.augmented.band_pass[k].max_abs_diff(&expected) < 1e-12);
    }
}

#[test]
fn contrastive_singleton_groups_are_zero() {
    let final_aug = DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
    let layer_aug = final_aug.clone();
    let groups = ContrastGroups {
        groups: [vec![0], vec![1], vec![2]],
    };
    let loss = contrastive_loss(
        &final_aug,
        &layer_aug,
        &groups,
        0.2,
        ClDenominator::IncludePositive,
    )
    .unwrap();
    assert!(loss.abs() < 1e-12);
}

#[test]
fn contrastive_two_node_scalar_oracle() {
    // Two users with hand-set 1-d embeddings; compare against a direct
    // scalar evaluation of the InfoNCE definition.
    let final_aug = DenseMatrix::from_vec(2, 1, vec![0.8, -0.4]);
    let layer_aug = DenseMatrix::from_vec(2, 1, vec![0.5, 0.3]);
    let tau = 0.2;
    let groups = ContrastGroups {
        groups: [vec![0, 1], vec![], vec![]],
    };
    let loss = contrastive_loss(
        &final_aug,
        &layer_aug,
        &groups,
        tau,
        ClDenominator::IncludePositive,
    )
    .unwrap();
    let mut expected = 0.0;
    for (i, other) in [(0usize, 1usize), (1, 0)] {
        let zi = final_aug.get(i, 0);
        let pos = (zi * layer_aug.get(i, 0) / tau).exp();
        let neg = (zi * layer_aug.get(other, 0) / tau).exp();
        expected += -(pos / (pos + neg)).ln();
    }
    assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
}

#[test]
fn empty_batch_is_error() {
    let final_aug = DenseMatrix::zeros(1, 2);
    let err = contrastive_loss(
        &final_aug,
        &final_aug,
        &ContrastGroups::default(),
        0.2,
        ClDenominator::IncludePositive,
    )
    .unwrap_err();
    assert!(matches!(err, ModelError::EmptyBatch));
}

#[test]
fn total_loss_arithmetic() {
    assert!((total_loss(1.0, 2.0, 4.0, 0.1, 0.5) - 3.2).abs() < 1e-12);
    assert!((total_loss(1.5, 99.0, 99.0, 0.0, 0.0) - 1.5).abs() < 1e-12);
}

fn loss_with_replay(
    graph: &GlobalGraph,
    table: &EmbeddingTable,
    affiliation: &[u32],
    pairs: &[NegativeSample],
    fcfg: &FilterConfig,
    lcfg: &LossConfig,
    opts: &ModelOptions,
    noise: &[DenseMatrix],
) -> f64 {
    forward_batch(
        graph,
        table,
        affiliation,
        pairs.to_vec(),
        fcfg,
        lcfg,
        opts,
        NoiseSource::Replay(noise),
    )
    .unwrap()
    .loss_total
}

/// Central finite differences with frozen noise vs analytic gradient.
fn gradient_check(seed: u64, opts: ModelOptions, variant: GraphVariant) -> f64 {
    let (corpus, table, graph, pairs) = tiny_setup(seed, variant);
    let fcfg = FilterConfig {
        layers: 2,
        ..FilterConfig::default()
    };
    let lcfg = LossConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_mul(31) + 5);
    let state = forward_batch(
        &graph,
        &table,
        corpus.affiliation(),
        pairs.clone(),
        &fcfg,
        &lcfg,
        &opts,
        NoiseSource::Rng(&mut rng),
    )
    .unwrap();
    let grads = backward(
        &state,
        &graph,
        &table,
        corpus.affiliation(),
        &fcfg,
        &lcfg,
        &opts,
    )
    .unwrap();
    let h = 1e-4;
    let mut max_rel = 0.0f64;
    let rows = table.matrix().rows();
    let cols = table.matrix().cols();
    for r in 0..rows {
        for c in 0..cols {
            let mut plus = table.clone();
            plus.matrix_mut().set(r, c, table.matrix().get(r, c) + h);
            let mut minus = table.clone();
            minus.matrix_mut().set(r, c, table.matrix().get(r, c) - h);
            let lp = loss_with_replay(
                &graph,
                &plus,
                corpus.affiliation(),
                &pairs,
                &fcfg,
                &lcfg,
                &opts,
                &state.noise,
            );
            let lm = loss_with_replay(
                &graph,
                &minus,
                corpus.affiliation(),
                &pairs,
                &fcfg,
                &lcfg,
                &opts,
                &state.noise,
            );
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.grad.get(r, c);
            if an.abs() > 1e-8 || fd.abs() > 1e-8 {
                let rel = (an - fd).abs() / an.abs().max(fd.abs());
                max_rel = max_rel.max(rel);
            }
        }
    }
    max_rel
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let rel = gradient_check(seed, ModelOptions::default(), GraphVariant::Full);
        assert!(rel < 1e-4, "seed {seed}: max rel err {rel}");
    }
}

#[test]
fn gradients_match_for_plain_powers() {
    let opts = ModelOptions {
        propagation: Propagation::PlainPowers,
        merged_answers: false,
    };
    let rel = gradient_check(11, opts, GraphVariant::Full);
    assert!(rel < 1e-4, "max rel err {rel}");
}

#[test]
fn gradients_match_for_merged_answers() {
    let opts = ModelOptions {
        propagation: Propagation::Jacobi,
        merged_answers: true,
    };
    let rel = gradient_check(13, opts, GraphVariant::MergedUaq);
    assert!(rel < 1e-4, "max rel err {rel}");
}

#[test]
fn empty_batch_forward_has_zero_losses_and_gradient() {
    let (corpus, table, graph, _) = tiny_setup(5, GraphVariant::Full);
    let lcfg = LossConfig {
        lambda2: 0.0,
        lambda3: 0.0,
        ..LossConfig::default()
    };
    let state = forward_batch(
        &graph,
        &table,
        corpus.affiliation(),
        Vec::new(),
        &FilterConfig::default(),
        &lcfg,
        &ModelOptions::default(),
        NoiseSource::Zero,
    )
    .unwrap();
    assert_eq!(state.loss_total, 0.0);
    let grads = backward(
        &state,
        &graph,
        &table,
        corpus.affiliation(),
        &FilterConfig::default(),
        &lcfg,
        &ModelOptions::default(),
    )
    .unwrap();
    assert_eq!(grads.grad.max_abs(), 0.0);
}

#[test]
fn plain_powers_reduces_to_mean_of_adjacency_powers() {
    // eps=0, lambda2=0, UA-only graph, plain propagation: the final
    // embedding is exactly the layer mean of A_hat^k E0 for k=0..=K.
    let (corpus, table, graph, pairs) = tiny_setup(6, GraphVariant::UaOnly);
    let fcfg = FilterConfig {
        layers: 2,
        ..FilterConfig::default()
    };
    let lcfg = LossConfig {
        noise_scale: 0.0,
        lambda2: 0.0,
        ..LossConfig::default()
    };
    let opts = ModelOptions {
        propagation: Propagation::PlainPowers,
        merged_answers: false,
    };
    let state = forward_batch(
        &graph,
        &table,
        corpus.affiliation(),
        pairs,
        &fcfg,
        &lcfg,
        &opts,
        NoiseSource::Zero,
    )
    .unwrap();
    let e0 = table.matrix();
    let e1 = graph.normalized.spmm(e0);
    let e2 = graph.normalized.spmm(&e1);
    let mut expected = DenseMatrix::zeros(e0.rows(), e0.cols());
    for m in [e0, &e1, &e2] {
        expected.axpy(1.0 / 3.0, m);
    }
    assert!(state.final_aug.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn score_monotone_in_user_answer_product() {
    let e_u = [1.0, 2.0];
    let e_q = [0.3, -0.2];
    let base = predict(&e_u, &e_q, &[0.5, 0.5], 0.1);
    let higher = predict(&e_u, &e_q, &[0.6, 0.5], 0.1);
    assert!(higher > base);
}
