//! Deterministic synthetic corpora with planted community structure.
//!
//! Users interact with answers of their own community with probability
//! `p_intra` and with foreign answers with probability `p_inter`, giving a
//! controllable homophily level for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusBuilder, CorpusError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate spec: expected interactions per user {0:.3} < 1")]
    DegenerateSpec(f64),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Parameters of a planted-community Q&A world.
#[derive(Clone, Copy, Debug)]
pub struct PlantedWorldSpec {
    pub communities: usize,
    pub users_per_community: usize,
    pub questions_per_community: usize,
    pub answers_per_community: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub seed: u64,
}

impl PlantedWorldSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.communities == 0
            || self.users_per_community == 0
            || self.questions_per_community == 0
            || self.answers_per_community == 0
        {
            return Err(SynthError::InvalidSpec("all counts must be positive".into()));
        }
        for p in [self.p_intra, self.p_inter] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidSpec(format!("probability {p} outside [0,1]")));
            }
        }
        let expected = self.expected_interactions_per_user();
        if expected < 1.0 {
            return Err(SynthError::DegenerateSpec(expected));
        }
        Ok(())
    }

    pub fn expected_interactions_per_user(&self) -> f64 {
        let intra = self.answers_per_community as f64 * self.p_intra;
        let inter =
            ((self.communities - 1) * self.answers_per_community) as f64 * self.p_inter;
        intra + inter
    }

    pub fn num_answers(&self) -> usize {
        self.communities * self.answers_per_community
    }

    /// Question a global answer index is affiliated with: answers are dealt
    /// round-robin over their community's questions.
    fn question_of(&self, answer: usize) -> usize {
        let community = answer / self.answers_per_community;
        let local = answer % self.answers_per_community;
        community * self.questions_per_community + local % self.questions_per_community
    }
}

/// Generate the planted world. Deterministic per seed: one shared RNG stream,
/// users outer, answers inner.
pub fn generate(spec: &PlantedWorldSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut builder = CorpusBuilder::default();
    let num_users = spec.communities * spec.users_per_community;
    let num_answers = spec.num_answers();
    for a in 0..num_answers {
        builder.add_affiliation(&format!("q{}", spec.question_of(a)), &format!("a{a}"))?;
    }
    for u in 0..num_users {
        let user_community = u / spec.users_per_community;
        for a in 0..num_answers {
            let answer_community = a / spec.answers_per_community;
            let p = if user_community == answer_community {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if rng.random::<f64>() < p {
                builder.add_interaction(
                    &format!("u{u}"),
                    &format!("q{}", spec.question_of(a)),
                    &format!("a{a}"),
                )?;
            }
        }
    }
    Ok(builder.finish()?)
}
