//! Graph collaborative filtering engine for question-answer recommendation.
//!
//! Interactions over (user, question, answer) triples are disentangled into
//! four graphs: two collaborative bipartite graphs (user-question,
//! user-answer) and two semantic graphs (question-answer correlation,
//! question-question top-n similarity). The merged global graph is
//! symmetrically normalized and node embeddings propagate through Jacobi
//! polynomial band-stop/band-pass filters. Training combines BPR ranking on
//! noise-augmented embeddings with a cross-layer contrastive loss; evaluation
//! ranks every non-interacted answer per user.
//!
//! Parallelism: inner loops (sparse propagation, top-n similarity, per-user
//! ranking) shard by row via rayon when the default `parallel` feature is on
//! and collect results in index order, so outputs are identical to the
//! sequential build.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod graphs;
pub mod jacobi;
pub mod linalg;
pub mod model;
pub mod par;
pub mod synthgen;
pub mod trainer;
