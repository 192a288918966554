//! Corpora, tokenization and vocabularies, plus loaders for the JSONL corpus
//! format, SemEval XML, GloVe-style vectors and a synthetic generator.

mod embeddings;
mod jsonl;
mod semeval;
mod synth;


use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embeddings::{load_embeddings, EmbeddingCoverage};
pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, write_jsonl, CandidateRecord, ThreadRecord};
pub use semeval::{import_semeval_xml, parse_semeval_xml};
pub use synth::{synth_generate, AnswerKind, SynthConfig, SynthCorpus};

/// Sentences are truncated to this many tokens.
pub const MAX_TOKENS: usize = 200;

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace and separates every punctuation character.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Token ↔ id map. Id 0 is the unknown/padding token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(UNKNOWN_TOKEN.to_string(), 0);
        Self {
            tokens: vec![UNKNOWN_TOKEN.to_string()],
            index,
        }
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return Err(Error::Integrity(format!("vocabulary must start with {UNKNOWN_TOKEN}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Integrity(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or 0 when unknown.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub answer_id: String,
    pub text: String,
    pub tokens: Vec<u32>,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionThread {
    pub thread_id: String,
    pub question: String,
    pub question_tokens: Vec<u32>,
    pub candidates: Vec<Candidate>,
    pub split: Split,
}

impl QuestionThread {
    pub fn num_relevant(&self) -> usize {
        self.candidates.iter().filter(|c| c.relevant).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub threads: Vec<QuestionThread>,
    pub vocabulary: Vocabulary,
}

enum VocabMode<'v> {
    Grow(Vocabulary),
    Fixed(&'v Vocabulary),
}

impl VocabMode<'_> {
    fn encode(&mut self, text: &str) -> Vec<u32> {
        let mut toks = tokenize(text);
        toks.truncate(MAX_TOKENS);
        match self {
            VocabMode::Grow(v) => toks.iter().map(|t| v.intern(t)).collect(),
            VocabMode::Fixed(v) => toks.iter().map(|t| v.id(t)).collect(),
        }
    }
}

impl Corpus {
    /// Tokenizes records, assigning ids in order of first appearance.
    ///
    /// Empty texts are dropped with a warning, as are threads left without
    /// candidates. Duplicate thread or answer ids are an integrity error.
    pub fn from_records(records: Vec<ThreadRecord>) -> Result<Self> {
        Self::build(records, VocabMode::Grow(Vocabulary::new()))
    }

    /// Like [`Corpus::from_records`] but against a fixed vocabulary; unseen tokens map to 0.
    pub fn with_vocabulary(records: Vec<ThreadRecord>, vocabulary: &Vocabulary) -> Result<Self> {
        Self::build(records, VocabMode::Fixed(vocabulary))
    }

    /// Re-encodes the corpus text against another vocabulary.
    pub fn reindex(&self, vocabulary: &Vocabulary) -> Result<Self> {
        Self::with_vocabulary(self.to_records(), vocabulary)
    }

    fn build(records: Vec<ThreadRecord>, mut vocab: VocabMode<'_>) -> Result<Self> {
        let mut threads = Vec::with_capacity(records.len());
        let mut thread_ids = HashSet::new();
        let mut answer_ids = HashSet::new();
        for rec in records {
            if !thread_ids.insert(rec.thread_id.clone()) {
                return Err(Error::Integrity(format!("duplicate thread id `{}`", rec.thread_id)));
            }
            let question_tokens = vocab.encode(&rec.question);
            let mut candidates = Vec::with_capacity(rec.candidates.len());
            for c in rec.candidates {
                if !answer_ids.insert(c.answer_id.clone()) {
                    return Err(Error::Integrity(format!("duplicate answer id `{}`", c.answer_id)));
                }
                let tokens = vocab.encode(&c.text);
                if tokens.is_empty() {
                    log::warn!("dropping answer `{}` of thread `{}`: empty text", c.answer_id, rec.thread_id);
                    continue;
                }
                candidates.push(Candidate {
                    answer_id: c.answer_id,
                    text: c.text,
                    tokens,
                    relevant: c.relevant,
                });
            }
            if question_tokens.is_empty() {
                log::warn!("dropping thread `{}`: empty question", rec.thread_id);
                continue;
            }
            if candidates.is_empty() {
                log::warn!("dropping thread `{}`: no candidates", rec.thread_id);
                continue;
            }
            threads.push(QuestionThread {
                thread_id: rec.thread_id,
                question: rec.question,
                question_tokens,
                candidates,
                split: rec.split,
            });
        }
        let vocabulary = match vocab {
            VocabMode::Grow(v) => v,
            VocabMode::Fixed(v) => v.clone(),
        };
        Ok(Self { threads, vocabulary })
    }

    pub fn to_records(&self) -> Vec<ThreadRecord> {
        self.threads
            .iter()
            .map(|t| ThreadRecord {
                thread_id: t.thread_id.clone(),
                question: t.question.clone(),
                candidates: t
                    .candidates
                    .iter()
                    .map(|c| CandidateRecord {
                        answer_id: c.answer_id.clone(),
                        text: c.text.clone(),
                        relevant: c.relevant,
                    })
                    .collect(),
                split: t.split,
            })
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QuestionThread> {
        self.threads.iter().filter(move |t| t.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn thread(&self, thread_id: &str) -> Option<&QuestionThread> {
        self.threads.iter().find(|t| t.thread_id == thread_id)
    }

    pub fn num_candidates(&self) -> usize {
        self.threads.iter().map(|t| t.candidates.len()).sum()
    }

    /// Checks the corpus invariants: unique ids, non-empty sequences, ids inside the vocabulary.
    pub fn validate(&self) -> Result<()> {
        let size = self.vocabulary.len();
        let check = |tokens: &[u32], what: &str| -> Result<()> {
            if tokens.is_empty() {
                return Err(Error::Integrity(format!("{what} has no tokens")));
            }
            if tokens.len() > MAX_TOKENS {
                return Err(Error::Integrity(format!("{what} exceeds {MAX_TOKENS} tokens")));
            }
            match tokens.iter().find(|&&id| id as usize >= size) {
                Some(&id) => Err(Error::Vocabulary { id, size }),
                None => Ok(()),
            }
        };
        let mut thread_ids = HashSet::new();
        let mut answer_ids = HashSet::new();
        for t in &self.threads {
            if !thread_ids.insert(&t.thread_id) {
                return Err(Error::Integrity(format!("duplicate thread id `{}`", t.thread_id)));
            }
            check(&t.question_tokens, &format!("question of `{}`", t.thread_id))?;
            if t.candidates.is_empty() {
                return Err(Error::Integrity(format!("thread `{}` has no candidates", t.thread_id)));
            }
            for c in &t.candidates {
                if !answer_ids.insert(&c.answer_id) {
                    return Err(Error::Integrity(format!("duplicate answer id `{}`", c.answer_id)));
                }
                check(&c.tokens, &format!("answer `{}`", c.answer_id))?;
            }
        }
        Ok(())
    }
}
