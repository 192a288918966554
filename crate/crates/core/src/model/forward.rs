use super::{Comparator, FeedForward, MatchingModel, Pass};
use crate::error::{Error, Result};
use crate::numerics::{dropout, sigmoid, BatchStats, Mode, Scalar, Tape, Tensor, Var};

/// Encoded levels of one sentence; `levels[k]` is `[width(k) × ⌈m/2ᵏ⌉]`.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub levels: Vec<Var>,
}

/// `[h^{Q^u}, h^{A^v}]` for one scale pair; a `[2·h_dim]` node on the tape.
#[derive(Debug, Clone, Copy)]
pub struct MatchVector {
    pub pair: (usize, usize),
    pub var: Var,
}

/// Score together with the intermediate match vectors (eval mode).
#[derive(Debug, Clone)]
pub struct ScoreTrace<T> {
    pub score: T,
    pub match_vectors: Vec<((usize, usize), Tensor<T>)>,
}

fn apply_dropout<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, rate: f64, pass: &mut Pass<'_>) -> Result<Var> {
    match pass {
        Pass::Eval => Ok(x),
        Pass::Train(rng) => dropout(tape, x, rate, Mode::Train, &mut **rng),
    }
}

impl<T: Scalar> MatchingModel<T> {
    /// Encodes a batch of sentences up to `depth` levels.
    ///
    /// In train mode the batch-norm statistics of each block are pooled over
    /// every frame of every sentence in the batch; the returned statistics
    /// (one per block) are meant for [`MatchingModel::update_running_stats`].
    pub fn encode_batch<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        sentences: &[&[u32]],
        depth: usize,
        mode: Mode,
    ) -> Result<(Vec<Hierarchy>, Vec<BatchStats<T>>)> {
        if depth > self.config.levels {
            return Err(Error::Contract(format!(
                "encoder depth {depth} exceeds configured levels {}",
                self.config.levels
            )));
        }
        let table = tape.param(self.embedding);
        let mut current = Vec::with_capacity(sentences.len());
        for s in sentences {
            if s.is_empty() {
                return Err(Error::EmptySequence("encode"));
            }
            current.push(tape.gather(table, s)?);
        }
        let mut out: Vec<Hierarchy> = current
            .iter()
            .map(|&v| Hierarchy { levels: vec![v] })
            .collect();
        let mut stats = Vec::new();
        for block in &self.blocks[..depth] {
            let (w, b) = (tape.param(block.weight), tape.param(block.bias));
            let convs = current
                .iter()
                .map(|&x| tape.conv1d(x, w, b))
                .collect::<Result<Vec<_>>>()?;
            let normed = match mode {
                Mode::Eval => convs
                    .iter()
                    .map(|&c| block.norm.forward(tape, c, Mode::Eval).map(|r| r.0))
                    .collect::<Result<Vec<_>>>()?,
                Mode::Train => {
                    let joined = tape.concat(&convs, 1)?;
                    let (y, s) = block.norm.forward(tape, joined, Mode::Train)?;
                    stats.push(s.expect("train mode yields statistics"));
                    let mut offset = 0;
                    let mut parts = Vec::with_capacity(convs.len());
                    for &c in &convs {
                        let len = tape.shape(c)[1];
                        parts.push(tape.slice(y, 1, offset, len)?);
                        offset += len;
                    }
                    parts
                }
            };
            current.clear();
            for x in normed {
                let r = tape.relu(x)?;
                current.push(tape.maxpool1d(r)?);
            }
            for (h, &x) in out.iter_mut().zip(&current) {
                h.levels.push(x);
            }
        }
        Ok((out, stats))
    }

    /// Eval-mode hierarchy of one sentence, as plain tensors.
    pub fn encode(&self, sentence: &[u32]) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::with_params(&self.params);
        let (h, _) = self.encode_batch(&mut tape, &[sentence], self.config.levels, Mode::Eval)?;
        Ok(h[0].levels.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Max-pooling matching of two representations with comparator `cmp`.
    pub fn match_pair<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        xq: Var,
        xa: Var,
        cmp: &Comparator,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        let (qs, as_) = (tape.shape(xq).to_vec(), tape.shape(xa).to_vec());
        if qs.len() != 2 || qs[0] != cmp.q_width {
            return Err(Error::shape("match_pair", &qs, &[cmp.q_width]));
        }
        if as_.len() != 2 || as_[0] != cmp.a_width {
            return Err(Error::shape("match_pair", &as_, &[cmp.a_width]));
        }
        let (m, n) = (qs[1], as_[1]);
        let w1 = tape.param(cmp.net.w1);
        let w1q = tape.slice(w1, 1, 0, cmp.q_width)?;
        let w1a = tape.slice(w1, 1, cmp.q_width, cmp.a_width)?;
        // first layer on [q_i, a_j] splits into W_q·q_i + W_a·a_j
        let u = tape.matmul(w1q, xq)?;
        let v = tape.matmul(w1a, xa)?;
        let pre = tape.outer_add(u, v)?;
        let b1 = tape.param(cmp.net.b1);
        let pre = tape.add_bias(pre, b1)?;
        let hidden = tape.relu(pre)?;
        let hidden = apply_dropout(tape, hidden, self.config.dropout, pass)?;
        let hidden = tape.reshape(hidden, &[self.config.compare_hidden, m * n])?;
        let w2 = tape.param(cmp.net.w2);
        let h = tape.matmul(w2, hidden)?;
        let b2 = tape.param(cmp.net.b2);
        let h = tape.add_bias(h, b2)?;
        let h = tape.reshape(h, &[self.config.match_dim, m, n])?;
        let per_q = tape.reduce_max(h, 2)?;
        let per_a = tape.reduce_max(h, 1)?;
        let hq = tape.reduce_mean(per_q, 1)?;
        let ha = tape.reduce_mean(per_a, 1)?;
        tape.concat(&[hq, ha], 0)
    }

    fn feed_forward<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        net: &FeedForward,
        x: Var,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        let len = tape.value(x).numel();
        let col = tape.reshape(x, &[len, 1])?;
        let w1 = tape.param(net.w1);
        let h = tape.matmul(w1, col)?;
        let b1 = tape.param(net.b1);
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h)?;
        let h = apply_dropout(tape, h, self.config.dropout, pass)?;
        let w2 = tape.param(net.w2);
        let out = tape.matmul(w2, h)?;
        let b2 = tape.param(net.b2);
        let out = tape.add_bias(out, b2)?;
        let rows = tape.shape(out)[0];
        tape.reshape(out, &[rows])
    }

    /// Match vectors of one (question, answer) pair in aggregation order.
    pub fn match_vectors<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        q: &Hierarchy,
        a: &Hierarchy,
        pass: &mut Pass<'_>,
    ) -> Result<Vec<MatchVector>> {
        self.comparators
            .iter()
            .map(|cmp| {
                let (u, v) = cmp.pair;
                let (xq, xa) = match (q.levels.get(u), a.levels.get(v)) {
                    (Some(&xq), Some(&xa)) => (xq, xa),
                    _ => {
                        return Err(Error::Contract(format!(
                            "hierarchy too shallow for scale pair ({u},{v})"
                        )))
                    }
                };
                let var = self.match_pair(tape, xq, xa, cmp, pass)?;
                Ok(MatchVector { pair: cmp.pair, var })
            })
            .collect()
    }

    /// `f_θ` on already-encoded sentences; a `[1]` node.
    pub fn score_encoded<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        q: &Hierarchy,
        a: &Hierarchy,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        let mvs = self.match_vectors(tape, q, a, pass)?;
        let vars: Vec<Var> = mvs.iter().map(|m| m.var).collect();
        let z = tape.concat(&vars, 0)?;
        self.feed_forward(tape, &self.aggregator, z, pass)
    }

    /// Scores `pairs` (indices into `sentences`) in one pass, encoding each sentence once.
    pub fn score_batch<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        sentences: &[&[u32]],
        pairs: &[(usize, usize)],
        pass: &mut Pass<'_>,
    ) -> Result<(Vec<Var>, Vec<BatchStats<T>>)> {
        let depth = self.config.mode.max_level(self.config.levels);
        let (enc, stats) = self.encode_batch(tape, sentences, depth, pass.mode())?;
        let scores = pairs
            .iter()
            .map(|&(qi, ai)| self.score_encoded(tape, &enc[qi], &enc[ai], pass))
            .collect::<Result<Vec<_>>>()?;
        Ok((scores, stats))
    }

    /// Eval-mode `f_θ(Q, A)`.
    pub fn score(&self, question: &[u32], answer: &[u32]) -> Result<T> {
        let mut tape = Tape::with_params(&self.params);
        let (s, _) = self.score_batch(&mut tape, &[question, answer], &[(0, 1)], &mut Pass::Eval)?;
        Ok(tape.value(s[0]).item())
    }

    /// Eval-mode scores of many answers against one question.
    pub fn score_many(&self, question: &[u32], answers: &[&[u32]]) -> Result<Vec<T>> {
        let mut tape = Tape::with_params(&self.params);
        let depth = self.config.mode.max_level(self.config.levels);
        let (q, _) = self.encode_batch(&mut tape, &[question], depth, Mode::Eval)?;
        let mut out = Vec::with_capacity(answers.len());
        for a in answers {
            let (enc, _) = self.encode_batch(&mut tape, &[a], depth, Mode::Eval)?;
            let s = self.score_encoded(&mut tape, &q[0], &enc[0], &mut Pass::Eval)?;
            out.push(tape.value(s).item());
        }
        Ok(out)
    }

    /// Eval-mode score with the individual match vectors exposed.
    pub fn score_traced(&self, question: &[u32], answer: &[u32]) -> Result<ScoreTrace<T>> {
        let mut tape = Tape::with_params(&self.params);
        let depth = self.config.mode.max_level(self.config.levels);
        let (enc, _) = self.encode_batch(&mut tape, &[question, answer], depth, Mode::Eval)?;
        let mvs = self.match_vectors(&mut tape, &enc[0], &enc[1], &mut Pass::Eval)?;
        let vars: Vec<Var> = mvs.iter().map(|m| m.var).collect();
        let z = tape.concat(&vars, 0)?;
        let s = self.feed_forward(&mut tape, &self.aggregator, z, &mut Pass::Eval)?;
        Ok(ScoreTrace {
            score: tape.value(s).item(),
            match_vectors: mvs
                .iter()
                .map(|m| (m.pair, tape.value(m.var).clone()))
                .collect(),
        })
    }

    /// `D(A|Q) = σ(f_θ(Q, A))`.
    pub fn discriminator_prob(&self, question: &[u32], answer: &[u32]) -> Result<T> {
        Ok(sigmoid(self.score(question, answer)?))
    }
}
