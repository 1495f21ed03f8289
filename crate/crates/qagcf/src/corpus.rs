//! Interaction corpus: dense ID spaces, train/val/test splits, negative sampling.
//!
//! Raw logs arrive as TSV triples `user<TAB>question<TAB>answer`; dense IDs are
//! assigned in first-seen order and duplicates collapse to a single binary
//! interaction. Each answer is affiliated with exactly one question.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed line {0}: expected at least 3 tab-separated fields")]
    MalformedLine(usize),
    #[error("answer {answer} affiliated with both {first} and {second}")]
    InconsistentAffiliation {
        answer: String,
        first: String,
        second: String,
    },
    #[error("corpus contains no interactions")]
    EmptyCorpus,
    #[error("user {0} has interacted with every answer; no negatives exist")]
    ExhaustedCandidates(u32),
    #[error("answer {0} never appears in any interaction; affiliation unknown")]
    MissingAffiliation(u32),
    #[error("corpus file corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Supported raw input formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Tsv,
}

/// One observed (user, question, answer) triple in dense IDs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u32,
    pub question: u32,
    pub answer: u32,
}

#[derive(Clone, Debug, Default)]
struct IdMap {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// Immutable interaction corpus with dense, contiguous ID spaces.
#[derive(Clone, Debug)]
pub struct Corpus {
    users: IdMap,
    questions: IdMap,
    answers: IdMap,
    interactions: Vec<Interaction>,
    affiliation: Vec<u32>,
}

impl Corpus {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn num_answers(&self) -> usize {
        self.answers.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users() + self.num_questions() + self.num_answers()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Question each answer belongs to, indexed by dense answer ID.
    pub fn affiliation(&self) -> &[u32] {
        &self.affiliation
    }

    pub fn question_of(&self, answer: u32) -> u32 {
        self.affiliation[answer as usize]
    }

    pub fn user_name(&self, u: u32) -> &str {
        &self.users.names[u as usize]
    }

    pub fn question_name(&self, q: u32) -> &str {
        &self.questions.names[q as usize]
    }

    pub fn answer_name(&self, a: u32) -> &str {
        &self.answers.names[a as usize]
    }

    pub fn user_id(&self, name: &str) -> Option<u32> {
        self.users.index.get(name).copied()
    }

    pub fn question_id(&self, name: &str) -> Option<u32> {
        self.questions.index.get(name).copied()
    }

    pub fn answer_id(&self, name: &str) -> Option<u32> {
        self.answers.index.get(name).copied()
    }

    /// Ingest a raw interaction log. Lines starting with `#` and blank lines
    /// are skipped; trailing fields beyond the third are ignored.
    pub fn ingest(path: &Path, format: Format) -> Result<Self, CorpusError> {
        match format {
            Format::Tsv => {
                let file = std::fs::File::open(path)?;
                Self::ingest_tsv(BufReader::new(file))
            }
        }
    }

    pub fn ingest_tsv<R: Read>(reader: BufReader<R>) -> Result<Self, CorpusError> {
        let mut builder = CorpusBuilder::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split('\t');
            let (user, question, answer) = match (fields.next(), fields.next(), fields.next()) {
                (Some(u), Some(q), Some(a)) if !u.is_empty() && !q.is_empty() && !a.is_empty() => {
                    (u, q, a)
                }
                _ => return Err(CorpusError::MalformedLine(lineno + 1)),
            };
            builder.add_interaction(user, question, answer)?;
        }
        builder.finish()
    }

    /// Emit the raw TSV form this module ingests (external names, one
    /// interaction per line). Never-interacted answers are not representable.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for it in &self.interactions {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.user_name(it.user),
                self.question_name(it.question),
                self.answer_name(it.answer)
            )?;
        }
        Ok(())
    }

    /// Serialized form: header `M N O`, then one `u q a` line per interaction.
    pub fn serialize<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "{} {} {}",
            self.num_users(),
            self.num_questions(),
            self.num_answers()
        )?;
        for it in &self.interactions {
            writeln!(w, "{} {} {}", it.user, it.question, it.answer)?;
        }
        Ok(())
    }

    /// Inverse of [`Corpus::serialize`]. External names become the decimal
    /// dense IDs. Every answer must appear in some interaction, otherwise its
    /// affiliation would be unrepresentable in this format.
    pub fn deserialize<R: Read>(reader: BufReader<R>) -> Result<Self, CorpusError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| CorpusError::Corrupt("missing header".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| CorpusError::Corrupt(format!("bad header `{header}`"))))
            .collect::<Result<_, _>>()?;
        let [m, n, o] = dims[..] else {
            return Err(CorpusError::Corrupt(format!("bad header `{header}`")));
        };
        let mut corpus = Corpus {
            users: IdMap::default(),
            questions: IdMap::default(),
            answers: IdMap::default(),
            interactions: Vec::new(),
            affiliation: vec![u32::MAX; o],
        };
        for i in 0..m {
            corpus.users.intern(&i.to_string());
        }
        for i in 0..n {
            corpus.questions.intern(&i.to_string());
        }
        for i in 0..o {
            corpus.answers.intern(&i.to_string());
        }
        let mut seen = HashSet::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ids: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| CorpusError::MalformedLine(lineno + 2)))
                .collect::<Result<_, _>>()?;
            let [u, q, a] = ids[..] else {
                return Err(CorpusError::MalformedLine(lineno + 2));
            };
            if u as usize >= m || q as usize >= n || a as usize >= o {
                return Err(CorpusError::Corrupt(format!(
                    "interaction ({u}, {q}, {a}) out of bounds for header {m} {n} {o}"
                )));
            }
            let prev = corpus.affiliation[a as usize];
            if prev == u32::MAX {
                corpus.affiliation[a as usize] = q;
            } else if prev != q {
                return Err(CorpusError::InconsistentAffiliation {
                    answer: a.to_string(),
                    first: prev.to_string(),
                    second: q.to_string(),
                });
            }
            if seen.insert((u, q, a)) {
                corpus.interactions.push(Interaction {
                    user: u,
                    question: q,
                    answer: a,
                });
            }
        }
        if corpus.interactions.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        if let Some(a) = corpus.affiliation.iter().position(|&q| q == u32::MAX) {
            return Err(CorpusError::MissingAffiliation(a as u32));
        }
        Ok(corpus)
    }

    /// Per-user interaction indices, grouped in dense user order.
    fn interactions_by_user(&self) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); self.num_users()];
        for (idx, it) in self.interactions.iter().enumerate() {
            by_user[it.user as usize].push(idx);
        }
        by_user
    }
}

/// Incremental corpus constructor shared by the TSV reader and the synthetic
/// generators.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    users: IdMap,
    questions: IdMap,
    answers: IdMap,
    affiliation: Vec<u32>,
    seen: HashSet<Interaction>,
    interactions: Vec<Interaction>,
}

impl CorpusBuilder {
    /// Register an answer under a question without recording an interaction.
    /// Used by generators so never-clicked answers stay in the candidate pool.
    pub fn add_affiliation(&mut self, question: &str, answer: &str) -> Result<(), CorpusError> {
        let q = self.questions.intern(question);
        let a = self.answers.intern(answer);
        self.check_affiliation(a, q, answer)?;
        Ok(())
    }

    pub fn add_interaction(
        &mut self,
        user: &str,
        question: &str,
        answer: &str,
    ) -> Result<(), CorpusError> {
        let u = self.users.intern(user);
        let q = self.questions.intern(question);
        let a = self.answers.intern(answer);
        self.check_affiliation(a, q, answer)?;
        let it = Interaction {
            user: u,
            question: q,
            answer: a,
        };
        if self.seen.insert(it) {
            self.interactions.push(it);
        }
        Ok(())
    }

    fn check_affiliation(&mut self, a: u32, q: u32, raw_answer: &str) -> Result<(), CorpusError> {
        if (a as usize) < self.affiliation.len() {
            let prev = self.affiliation[a as usize];
            if prev != q {
                return Err(CorpusError::InconsistentAffiliation {
                    answer: raw_answer.to_owned(),
                    first: self.questions.names[prev as usize].clone(),
                    second: self.questions.names[q as usize].clone(),
                });
            }
        } else {
            debug_assert_eq!(a as usize, self.affiliation.len());
            self.affiliation.push(q);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Corpus, CorpusError> {
        if self.interactions.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Corpus {
            users: self.users,
            questions: self.questions,
            answers: self.answers,
            interactions: self.interactions,
            affiliation: self.affiliation,
        })
    }
}

/// Disjoint train/validation/test partition of a corpus.
#[derive(Clone, Debug)]
pub struct SplitSet {
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub seed: u64,
}

/// Per-user stratified random split. Users with fewer than 3 interactions go
/// entirely to train; otherwise each user contributes `floor(cnt*r/total)`
/// interactions to validation and test and the rest to train.
pub fn split(corpus: &Corpus, ratios: (u32, u32, u32), seed: u64) -> SplitSet {
    use rand::SeedableRng;
    let (r_train, r_val, r_test) = ratios;
    assert!(r_train > 0 && r_val > 0 && r_test > 0, "ratios must be positive");
    let total = (r_train + r_val + r_test) as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = SplitSet {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for mut indices in corpus.interactions_by_user() {
        let cnt = indices.len();
        if cnt < 3 {
            out.train
                .extend(indices.iter().map(|&i| corpus.interactions[i]));
            continue;
        }
        indices.shuffle(&mut rng);
        let n_val = cnt * r_val as usize / total;
        let n_test = cnt * r_test as usize / total;
        let (test_part, rest) = indices.split_at(n_test);
        let (val_part, train_part) = rest.split_at(n_val);
        out.test
            .extend(test_part.iter().map(|&i| corpus.interactions[i]));
        out.validation
            .extend(val_part.iter().map(|&i| corpus.interactions[i]));
        out.train
            .extend(train_part.iter().map(|&i| corpus.interactions[i]));
    }
    out
}

/// One BPR training pair: an observed positive and a uniformly sampled
/// non-interacted negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub user: u32,
    pub pos_question: u32,
    pub pos_answer: u32,
    pub neg_question: u32,
    pub neg_answer: u32,
}

/// Uniform negative sampler over answers each user has not interacted with in
/// train. Holds no RNG state; callers pass their own stream.
pub struct NegativeSampler {
    num_answers: usize,
    user_train_answers: Vec<Vec<u32>>,
    affiliation: Vec<u32>,
}

impl NegativeSampler {
    pub fn new(corpus: &Corpus, train: &[Interaction]) -> Self {
        let mut user_train_answers = vec![Vec::new(); corpus.num_users()];
        for it in train {
            user_train_answers[it.user as usize].push(it.answer);
        }
        for answers in &mut user_train_answers {
            answers.sort_unstable();
            answers.dedup();
        }
        Self {
            num_answers: corpus.num_answers(),
            user_train_answers,
            affiliation: corpus.affiliation().to_vec(),
        }
    }

    pub fn sample_one(&self, user: u32, rng: &mut ChaCha20Rng) -> Result<(u32, u32), CorpusError> {
        let seen = &self.user_train_answers[user as usize];
        let candidates = self.num_answers - seen.len();
        if candidates == 0 {
            return Err(CorpusError::ExhaustedCandidates(user));
        }
        // Dense users would make rejection sampling slow; enumerate instead.
        let answer = if candidates * 8 < self.num_answers {
            let pick = rng.random_range(0..candidates);
            let mut remaining = pick;
            let mut found = None;
            let mut seen_iter = seen.iter().peekable();
            for a in 0..self.num_answers as u32 {
                if seen_iter.peek() == Some(&&a) {
                    seen_iter.next();
                    continue;
                }
                if remaining == 0 {
                    found = Some(a);
                    break;
                }
                remaining -= 1;
            }
            found.expect("candidate count mismatch")
        } else {
            loop {
                let a = rng.random_range(0..self.num_answers as u32);
                if seen.binary_search(&a).is_err() {
                    break a;
                }
            }
        };
        Ok((self.affiliation[answer as usize], answer))
    }

    pub fn sample_batch(
        &self,
        batch: &[Interaction],
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<NegativeSample>, CorpusError> {
        batch
            .iter()
            .map(|it| {
                let (neg_question, neg_answer) = self.sample_one(it.user, rng)?;
                Ok(NegativeSample {
                    user: it.user,
                    pos_question: it.question,
                    pos_answer: it.answer,
                    neg_question,
                    neg_answer,
                })
            })
            .collect()
    }
}

/// One negative per positive, uniform over each user's non-interacted answers.
pub fn sample_negatives(
    split: &SplitSet,
    corpus: &Corpus,
    batch: &[Interaction],
    rng: &mut ChaCha20Rng,
) -> Result<Vec<NegativeSample>, CorpusError> {
    NegativeSampler::new(corpus, &split.train).sample_batch(batch, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::io::BufReader;

    fn corpus_from(text: &str) -> Result<Corpus, CorpusError> {
        Corpus::ingest_tsv(BufReader::new(text.as_bytes()))
    }

    #[test]
    fn ingest_counts_and_order() {
        let c = corpus_from("u1\tq1\ta1\nu1\tq1\ta2\nu2\tq2\ta3\n").unwrap();
        assert_eq!(c.num_users(), 2);
        assert_eq!(c.num_questions(), 2);
        assert_eq!(c.num_answers(), 3);
        assert_eq!(c.interactions().len(), 3);
        assert_eq!(c.user_name(0), "u1");
        assert_eq!(c.question_of(1), 0);
    }

    #[test]
    fn ingest_dedupes_and_skips_comments() {
        let c = corpus_from("# header\nu1\tq1\ta1\textra\n\nu1\tq1\ta1\n").unwrap();
        assert_eq!(c.interactions().len(), 1);
    }

    #[test]
    fn inconsistent_affiliation_rejected() {
        let err = corpus_from("u1\tq1\ta1\nu1\tq2\ta1\n").unwrap_err();
        assert!(matches!(err, CorpusError::InconsistentAffiliation { .. }));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = corpus_from("u1\tq1\ta1\nbroken line\n").unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine(2)));
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = corpus_from("# nothing\n").unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCorpus));
    }

    #[test]
    fn serialize_round_trip_is_identity() {
        let c = corpus_from("u1\tq1\ta1\nu1\tq1\ta2\nu2\tq2\ta3\nu2\tq1\ta1\n").unwrap();
        let mut buf = Vec::new();
        c.serialize(&mut buf).unwrap();
        let c2 = Corpus::deserialize(BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(c.num_users(), c2.num_users());
        assert_eq!(c.num_questions(), c2.num_questions());
        assert_eq!(c.num_answers(), c2.num_answers());
        assert_eq!(c.interactions(), c2.interactions());
        assert_eq!(c.affiliation(), c2.affiliation());
        // Serializing again must be byte-identical.
        let mut buf2 = Vec::new();
        c2.serialize(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn split_ten_interactions_is_8_1_1() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("u1\tq{i}\ta{i}\n"));
        }
        let c = corpus_from(&text).unwrap();
        let s = split(&c, (8, 1, 1), 0);
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.validation.len(), 1);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let mut text = String::new();
        for u in 0..5 {
            for i in 0..12 {
                text.push_str(&format!("u{u}\tq{i}\ta{i}\n"));
            }
        }
        let c = corpus_from(&text).unwrap();
        let s1 = split(&c, (8, 1, 1), 7);
        let s2 = split(&c, (8, 1, 1), 7);
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.validation, s2.validation);
        assert_eq!(s1.test, s2.test);
    }

    #[test]
    fn tiny_users_go_to_train() {
        let c = corpus_from("u1\tq1\ta1\nu1\tq2\ta2\n").unwrap();
        let s = split(&c, (8, 1, 1), 0);
        assert_eq!(s.train.len(), 2);
        assert!(s.validation.is_empty() && s.test.is_empty());
    }

    #[test]
    fn negative_sampler_picks_only_candidate() {
        // User interacted with every answer except a7.
        let mut text = String::new();
        for i in 0..7 {
            text.push_str(&format!("u1\tq0\ta{i}\n"));
        }
        text.push_str("u2\tq0\ta7\n");
        let c = corpus_from(&text).unwrap();
        let train: Vec<_> = c.interactions().to_vec();
        let sampler = NegativeSampler::new(&c, &train);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (q, a) = sampler.sample_one(0, &mut rng).unwrap();
            assert_eq!(a, 7);
            assert_eq!(q, 0);
        }
    }

    #[test]
    fn exhausted_candidates_detected() {
        let c = corpus_from("u1\tq0\ta0\nu1\tq0\ta1\nu1\tq1\ta2\n").unwrap();
        let train: Vec<_> = c.interactions().to_vec();
        let sampler = NegativeSampler::new(&c, &train);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let err = sampler.sample_one(0, &mut rng).unwrap_err();
        assert!(matches!(err, CorpusError::ExhaustedCandidates(0)));
    }

    #[test]
    fn negative_sampling_is_uniform() {
        // 3 candidates out of 6 answers; each should land near 1/3.
        let mut text = String::new();
        for i in 0..3 {
            text.push_str(&format!("u1\tq0\ta{i}\n"));
        }
        for i in 3..6 {
            text.push_str(&format!("u2\tq0\ta{i}\n"));
        }
        let c = corpus_from(&text).unwrap();
        let train: Vec<_> = c.interactions().to_vec();
        let sampler = NegativeSampler::new(&c, &train);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            let (_, a) = sampler.sample_one(0, &mut rng).unwrap();
            counts[a as usize] += 1;
        }
        assert_eq!(counts[..3].iter().sum::<usize>(), 0);
        // 3-sigma binomial bound around draws/3.
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[3..] {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn negatives_never_collide_with_train_positives() {
        let mut text = String::new();
        for u in 0..4 {
            for i in 0..6 {
                let a = (u + i) % 10;
                text.push_str(&format!("u{u}\tq{}\ta{a}\n", a % 3));
            }
        }
        let c = corpus_from(&text).unwrap();
        let s = split(&c, (8, 1, 1), 1);
        let sampler = NegativeSampler::new(&c, &s.train);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let negs = sampler.sample_batch(&s.train, &mut rng).unwrap();
        let train_set: HashSet<(u32, u32)> =
            s.train.iter().map(|it| (it.user, it.answer)).collect();
        for neg in negs {
            assert!(!train_set.contains(&(neg.user, neg.neg_answer)));
            assert_eq!(c.question_of(neg.neg_answer), neg.neg_question);
        }
    }
}
