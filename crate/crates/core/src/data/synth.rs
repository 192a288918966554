use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CandidateRecord, Corpus, Split, ThreadRecord};
use crate::error::{Error, Result};

/// Settings for [`synth_generate`].
///
/// Topics own disjoint token sets `t{t}w{k}`. Each question draws its words
/// from a key, a random subset of word indices of its topic `t`. Relevant
/// answers use the same indices in the partner topic `t+1 mod T`, so they
/// share no token with their question and answers to other questions of the
/// same topic match only partly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub threads: usize,
    pub answers_per_thread: usize,
    pub topics: usize,
    pub vocab_per_topic: usize,
    /// Number of word indices in a question's key.
    pub key_size: usize,
    pub seed: u64,
    pub relevant_fraction: f64,
    /// Share of candidates that mix partner-topic tokens with unrelated ones.
    pub confusable_fraction: f64,
    /// Share of candidates drawn from the question's own topic.
    pub distractor_fraction: f64,
    pub dev_threads: usize,
    pub test_threads: usize,
    pub question_len: (usize, usize),
    pub answer_len: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            threads: 50,
            answers_per_thread: 30,
            topics: 4,
            vocab_per_topic: 8,
            key_size: 3,
            seed: 0,
            relevant_fraction: 0.1,
            confusable_fraction: 0.1,
            distractor_fraction: 0.2,
            dev_threads: 0,
            test_threads: 10,
            question_len: (6, 10),
            answer_len: (5, 9),
        }
    }
}

/// How a synthetic candidate was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Relevant,
    /// Partner-topic words off the question's key; a planted hard negative.
    Confusable,
    /// Same topic as the question: lexical overlap without relevance.
    Distractor,
    Unrelated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Question topic per thread, aligned with `corpus.threads`.
    pub topics: Vec<usize>,
    /// Sorted key indices per thread.
    pub keys: Vec<Vec<usize>>,
    /// Generation kind per candidate, aligned with each thread's candidates.
    pub kinds: Vec<Vec<AnswerKind>>,
    pub num_topics: usize,
}

impl SynthCorpus {
    pub fn partner(&self, topic: usize) -> usize {
        (topic + 1) % self.num_topics
    }

    pub fn kind_of(&self, answer_id: &str) -> Option<(usize, AnswerKind)> {
        self.corpus.threads.iter().enumerate().find_map(|(ti, t)| {
            t.candidates
                .iter()
                .position(|c| c.answer_id == answer_id)
                .map(|ci| (ti, self.kinds[ti][ci]))
        })
    }
}

fn word(topic: usize, k: usize) -> String {
    format!("t{topic}w{k}")
}

fn sentence(rng: &mut ChaCha8Rng, topic: usize, indices: &[usize], len: (usize, usize)) -> String {
    let n = rng.gen_range(len.0..=len.1);
    (0..n)
        .map(|_| word(topic, *indices.choose(rng).expect("non-empty index set")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut s = rand::seq::index::sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

fn count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    let c = config;
    if c.topics < 2 {
        return Err(Error::Config("synthetic corpus needs at least 2 topics".into()));
    }
    if c.vocab_per_topic < 2 {
        return Err(Error::Config("vocabulary too small for disjoint topics (need ≥ 2 tokens each)".into()));
    }
    if c.key_size == 0 || c.key_size >= c.vocab_per_topic {
        return Err(Error::Config(format!(
            "key_size must lie in 1..{} so that off-key words exist",
            c.vocab_per_topic
        )));
    }
    if c.threads == 0 || c.answers_per_thread == 0 {
        return Err(Error::Config("synthetic corpus needs threads and candidates".into()));
    }
    if c.dev_threads + c.test_threads > c.threads {
        return Err(Error::Config("held-out threads exceed total threads".into()));
    }
    for (name, f) in [
        ("relevant_fraction", c.relevant_fraction),
        ("confusable_fraction", c.confusable_fraction),
        ("distractor_fraction", c.distractor_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("{name} must lie in [0, 1]")));
        }
    }
    if c.question_len.0 == 0 || c.question_len.0 > c.question_len.1 || c.answer_len.0 == 0 || c.answer_len.0 > c.answer_len.1 {
        return Err(Error::Config("sentence length ranges must be non-empty and positive".into()));
    }
    let n = c.answers_per_thread;
    let relevant = count(c.relevant_fraction, n).clamp(1, n);
    let confusable = count(c.confusable_fraction, n).min(n - relevant);
    let distractor = count(c.distractor_fraction, n).min(n - relevant - confusable);

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let train_end = c.threads - c.dev_threads - c.test_threads;
    let mut records = Vec::with_capacity(c.threads);
    let mut topics = Vec::with_capacity(c.threads);
    let mut keys = Vec::with_capacity(c.threads);
    let mut kinds = Vec::with_capacity(c.threads);
    for i in 0..c.threads {
        let topic = rng.gen_range(0..c.topics);
        let partner = (topic + 1) % c.topics;
        let others: Vec<usize> = (0..c.topics).filter(|&t| t != topic && t != partner).collect();
        let key = subset(&mut rng, c.vocab_per_topic, c.key_size);
        let off_key: Vec<usize> = (0..c.vocab_per_topic).filter(|k| !key.contains(k)).collect();
        let question = sentence(&mut rng, topic, &key, c.question_len);

        let mut plan = Vec::with_capacity(n);
        plan.extend(std::iter::repeat(AnswerKind::Relevant).take(relevant));
        plan.extend(std::iter::repeat(AnswerKind::Confusable).take(confusable));
        plan.extend(std::iter::repeat(AnswerKind::Distractor).take(distractor));
        plan.resize(n, AnswerKind::Unrelated);
        plan.shuffle(&mut rng);

        let thread_id = format!("s{i:04}");
        let candidates = plan
            .iter()
            .enumerate()
            .map(|(j, kind)| {
                let other = if others.is_empty() { topic } else { *others.choose(&mut rng).expect("non-empty") };
                // every kind uses key_size distinct indices so word statistics do not reveal it
                let (source, indices) = match kind {
                    AnswerKind::Relevant => (partner, key.clone()),
                    AnswerKind::Confusable => {
                        let n = c.key_size.min(off_key.len());
                        (partner, off_key.choose_multiple(&mut rng, n).copied().collect())
                    }
                    AnswerKind::Distractor => (topic, subset(&mut rng, c.vocab_per_topic, c.key_size)),
                    AnswerKind::Unrelated => (other, subset(&mut rng, c.vocab_per_topic, c.key_size)),
                };
                CandidateRecord {
                    answer_id: format!("{thread_id}_a{j:03}"),
                    text: sentence(&mut rng, source, &indices, c.answer_len),
                    relevant: *kind == AnswerKind::Relevant,
                }
            })
            .collect();
        let split = if i < train_end {
            Split::Train
        } else if i < train_end + c.dev_threads {
            Split::Dev
        } else {
            Split::Test
        };
        records.push(ThreadRecord {
            thread_id,
            question,
            candidates,
            split,
        });
        topics.push(topic);
        keys.push(key);
        kinds.push(plan);
    }
    let corpus = Corpus::from_records(records)?;
    corpus.validate()?;
    Ok(SynthCorpus {
        corpus,
        topics,
        keys,
        kinds,
        num_topics: c.topics,
    })
}
