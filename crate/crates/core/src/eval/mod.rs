//! Ranking and MAP@10 / MRR@10.


use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, QuestionThread, Split};
use crate::error::{Error, Result};
use crate::model::MatchingModel;
use crate::numerics::Scalar;

/// Rank cutoff of both measures.
pub const CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub answer_id: String,
    pub score: f64,
    pub relevant: bool,
    /// 1-based.
    pub rank: usize,
}

/// Candidates of one thread by descending score, ties by ascending answer id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub thread_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn from_scores(thread_id: &str, mut items: Vec<(String, f64, bool)>) -> Self {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = items
            .into_iter()
            .enumerate()
            .map(|(i, (answer_id, score, relevant))| RankedEntry {
                answer_id,
                score,
                relevant,
                rank: i + 1,
            })
            .collect();
        Self {
            thread_id: thread_id.to_string(),
            entries,
        }
    }

    pub fn num_relevant(&self) -> usize {
        self.entries.iter().filter(|e| e.relevant).count()
    }
}

/// Scores every candidate of `thread` with the model in eval mode.
pub fn rank<T: Scalar>(thread: &QuestionThread, model: &MatchingModel<T>) -> Result<RankedList> {
    let answers: Vec<&[u32]> = thread.candidates.iter().map(|c| c.tokens.as_slice()).collect();
    let scores = model.score_many(&thread.question_tokens, &answers)?;
    let items = thread
        .candidates
        .iter()
        .zip(scores)
        .map(|(c, s)| {
            let s = s.as_f64();
            if s.is_finite() {
                Ok((c.answer_id.clone(), s, c.relevant))
            } else {
                Err(Error::NonFinite("score"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList::from_scores(&thread.thread_id, items))
}

/// AP over the top 10, normalized by `min(R, 10)`; `None` when the thread has no relevant candidate.
pub fn average_precision_at10(ranked: &RankedList) -> Option<f64> {
    let r = ranked.num_relevant();
    if r == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (k, e) in ranked.entries.iter().take(CUTOFF).enumerate() {
        if e.relevant {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / r.min(CUTOFF) as f64)
}

/// Reciprocal rank of the first relevant candidate within the top 10 (0 beyond it).
pub fn reciprocal_rank_at10(ranked: &RankedList) -> Option<f64> {
    if ranked.num_relevant() == 0 {
        return None;
    }
    Some(
        ranked
            .entries
            .iter()
            .take(CUTOFF)
            .position(|e| e.relevant)
            .map_or(0.0, |k| 1.0 / (k + 1) as f64),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
    /// Threads with at least one relevant candidate.
    pub included: usize,
    pub excluded: usize,
}

fn mean_over(lists: &[RankedList], f: fn(&RankedList) -> Option<f64>) -> Result<f64> {
    let values: Vec<f64> = lists.iter().filter_map(f).collect();
    if values.is_empty() {
        return Err(Error::Evaluation("no thread with a relevant candidate".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn map_at10(lists: &[RankedList]) -> Result<f64> {
    mean_over(lists, average_precision_at10)
}

pub fn mrr_at10(lists: &[RankedList]) -> Result<f64> {
    mean_over(lists, reciprocal_rank_at10)
}

pub fn evaluate(lists: &[RankedList]) -> Result<Metrics> {
    let included = lists.iter().filter(|l| l.num_relevant() > 0).count();
    Ok(Metrics {
        map: map_at10(lists)?,
        mrr: mrr_at10(lists)?,
        included,
        excluded: lists.len() - included,
    })
}

/// Ranks every thread of `split` and computes the metrics.
pub fn evaluate_split<T: Scalar>(
    model: &MatchingModel<T>,
    corpus: &Corpus,
    split: Split,
) -> Result<(Metrics, Vec<RankedList>)> {
    let lists = corpus
        .split(split)
        .map(|t| rank(t, model))
        .collect::<Result<Vec<_>>>()?;
    if lists.is_empty() {
        return Err(Error::Evaluation(format!("split `{}` is empty", split.as_str())));
    }
    Ok((evaluate(&lists)?, lists))
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLine {
    pub thread_id: String,
    pub answer_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Writes `thread_id\tanswer_id\tscore\trank` lines in rank order.
pub fn write_predictions(lists: &[RankedList], mut out: impl Write) -> Result<()> {
    for l in lists {
        for e in &l.entries {
            writeln!(out, "{}\t{}\t{}\t{}", l.thread_id, e.answer_id, e.score, e.rank)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(input: impl BufRead) -> Result<Vec<PredictionLine>> {
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse {
            line: i + 1,
            message: format!("prediction line: {what}"),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [thread, answer, score, rank] = fields[..] else {
            return Err(bad("expected 4 tab-separated fields"));
        };
        lines.push(PredictionLine {
            thread_id: thread.to_string(),
            answer_id: answer.to_string(),
            score: score.parse().map_err(|_| bad("bad score"))?,
            rank: rank.parse().map_err(|_| bad("bad rank"))?,
        });
    }
    Ok(lines)
}

/// Regroups prediction lines into ranked lists, taking labels from `gold(thread_id, answer_id)`.
pub fn lists_from_predictions(
    lines: &[PredictionLine],
    mut gold: impl FnMut(&str, &str) -> Option<bool>,
) -> Result<Vec<RankedList>> {
    let mut groups: Vec<(String, Vec<(String, f64, bool)>)> = Vec::new();
    for p in lines {
        let relevant = gold(&p.thread_id, &p.answer_id).ok_or_else(|| {
            Error::Evaluation(format!("unknown answer `{}` in thread `{}`", p.answer_id, p.thread_id))
        })?;
        if groups.last().map(|g| &g.0) != Some(&p.thread_id) {
            groups.push((p.thread_id.clone(), Vec::new()));
        }
        groups.last_mut().expect("pushed").1.push((p.answer_id.clone(), p.score, relevant));
    }
    Ok(groups
        .into_iter()
        .map(|(t, items)| RankedList::from_scores(&t, items))
        .collect())
}
