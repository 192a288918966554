use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{Candidate, Corpus};
use crate::error::{Error, Result};

/// Position of a candidate inside a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerRef {
    pub thread: usize,
    pub candidate: usize,
}

impl AnswerRef {
    pub fn resolve<'c>(&self, corpus: &'c Corpus) -> &'c Candidate {
        &corpus.threads[self.thread].candidates[self.candidate]
    }

    pub fn tokens<'c>(&self, corpus: &'c Corpus) -> &'c [u32] {
        &self.resolve(corpus).tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    LabeledNegative,
    OtherThread,
}

/// Alternative answers for one question, sampled without replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub question: usize,
    pub answers: Vec<AnswerRef>,
    pub sources: Vec<PoolSource>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn tokens<'c>(&self, corpus: &'c Corpus) -> Vec<&'c [u32]> {
        self.answers.iter().map(|a| a.tokens(corpus)).collect()
    }

    /// Fails if any member is labeled relevant for the pool's own question.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        match self
            .answers
            .iter()
            .find(|a| a.thread == self.question && a.resolve(corpus).relevant)
        {
            Some(a) => Err(Error::Integrity(format!(
                "pool of `{}` contains its positive `{}`",
                corpus.threads[self.question].thread_id,
                a.resolve(corpus).answer_id
            ))),
            None => Ok(()),
        }
    }
}

/// Draws `min(size, available)` answers uniformly without replacement from the
/// question's labeled negatives together with every candidate of the `others` threads.
///
/// `others` lists thread indices eligible as outside sources; the question itself is skipped.
pub fn build_pool(
    corpus: &Corpus,
    question: usize,
    others: &[usize],
    size: usize,
    rng: &mut dyn RngCore,
) -> Result<CandidatePool> {
    let thread = corpus
        .threads
        .get(question)
        .ok_or_else(|| Error::Contract(format!("no thread at index {question}")))?;
    let own: Vec<AnswerRef> = thread
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.relevant)
        .map(|(i, _)| AnswerRef {
            thread: question,
            candidate: i,
        })
        .collect();
    // cumulative candidate counts of the outside threads
    let outside: Vec<usize> = others.iter().copied().filter(|&t| t != question).collect();
    let mut ends = Vec::with_capacity(outside.len());
    let mut total = own.len();
    for &t in &outside {
        total += corpus.threads[t].candidates.len();
        ends.push(total);
    }
    if total == 0 {
        return Err(Error::Corpus(format!(
            "no eligible negatives for thread `{}`",
            thread.thread_id
        )));
    }
    let take = size.min(total);
    let mut answers = Vec::with_capacity(take);
    let mut sources = Vec::with_capacity(take);
    for k in index::sample(rng, total, take).into_iter() {
        if k < own.len() {
            answers.push(own[k]);
            sources.push(PoolSource::LabeledNegative);
        } else {
            let slot = ends.partition_point(|&e| e <= k);
            let start = if slot == 0 { own.len() } else { ends[slot - 1] };
            answers.push(AnswerRef {
                thread: outside[slot],
                candidate: k - start,
            });
            sources.push(PoolSource::OtherThread);
        }
    }
    Ok(CandidatePool {
        question,
        answers,
        sources,
    })
}
