use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MatchingModel, Pass};
use crate::numerics::{adam_step, sigmoid, softmax_slice, AdamState, BatchStats, Gradients, Scalar, Tape, Tensor, Var};

/// Floor applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

/// How negatives are picked from the generator's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Sequential draws without replacement, proportional to the remaining mass.
    #[default]
    Stochastic,
    /// The S most probable answers (ties by pool position).
    TopS,
}

/// Epoch and batch index, attached to divergence errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepIndex {
    pub epoch: usize,
    pub batch: usize,
}

impl StepIndex {
    fn diverged(self, detail: impl Into<String>) -> Error {
        Error::Divergence {
            epoch: self.epoch,
            batch: self.batch,
            detail: detail.into(),
        }
    }
}

/// `p_G` over a pool: softmax of the generator scores.
pub fn generator_distribution<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::Contract("generator distribution over an empty pool".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("generator score"));
    }
    Ok(softmax_slice(scores))
}

/// Eval-mode scores of `answers` against `question`.
pub fn pool_scores<T: Scalar>(model: &MatchingModel<T>, question: &[u32], answers: &[&[u32]]) -> Result<Vec<T>> {
    model.score_many(question, answers)
}

/// Picks `s` distinct pool positions according to `probs`.
///
/// Negative or non-finite weights count as zero; when the remaining mass
/// vanishes the rest is drawn uniformly.
pub fn sample_negatives<T: Scalar>(
    probs: &[T],
    s: usize,
    sampling: Sampling,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>> {
    if s > probs.len() {
        return Err(Error::Contract(format!(
            "cannot sample {s} negatives from a pool of {}",
            probs.len()
        )));
    }
    let mut weights: Vec<f64> = probs
        .iter()
        .map(|p| {
            let p = p.as_f64();
            if p.is_finite() && p > 0.0 {
                p
            } else {
                0.0
            }
        })
        .collect();
    match sampling {
        Sampling::TopS => {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
            order.truncate(s);
            Ok(order)
        }
        Sampling::Stochastic => {
            let mut taken = vec![false; probs.len()];
            let mut out = Vec::with_capacity(s);
            for _ in 0..s {
                let total: f64 = weights.iter().sum();
                let pick = if total > 0.0 {
                    let u = rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut last = None;
                    let mut chosen = None;
                    for (i, &w) in weights.iter().enumerate() {
                        if w <= 0.0 {
                            continue;
                        }
                        acc += w;
                        last = Some(i);
                        if u < acc {
                            chosen = Some(i);
                            break;
                        }
                    }
                    chosen.or(last).expect("positive mass")
                } else {
                    let free: Vec<usize> = (0..probs.len()).filter(|&i| !taken[i]).collect();
                    free[rng.gen_range(0..free.len())]
                };
                taken[pick] = true;
                weights[pick] = 0.0;
                out.push(pick);
            }
            Ok(out)
        }
    }
}

/// `log(1 − σ(f))` with the argument floored at [`LOG_FLOOR`].
pub fn log_one_minus_d<T: Scalar>(tape: &mut Tape<'_, T>, f: Var) -> Result<Var> {
    let neg = tape.scale(f, -T::one())?;
    let p = tape.sigmoid(neg)?;
    tape.ln_clamped(p, T::lit(LOG_FLOOR))
}

/// `−mean log D(pos) − mean log(1 − D(neg))` over `[1]`-shaped score nodes.
pub fn discriminator_objective<T: Scalar>(tape: &mut Tape<'_, T>, positives: &[Var], negatives: &[Var]) -> Result<Var> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Contract(
            "discriminator batch needs at least one positive and one negative".into(),
        ));
    }
    let pos = tape.concat(positives, 0)?;
    let d = tape.sigmoid(pos)?;
    let log_d = tape.ln_clamped(d, T::lit(LOG_FLOOR))?;
    let pos_term = tape.reduce_mean(log_d, 0)?;
    let neg = tape.concat(negatives, 0)?;
    let log_nd = log_one_minus_d(tape, neg)?;
    let neg_term = tape.reduce_mean(log_nd, 0)?;
    let total = tape.add(pos_term, neg_term)?;
    tape.scale(total, -T::one())
}

/// `lambda · Σ w²` over regularized trainable parameters; `None` when `lambda` is 0.
pub fn l2_penalty<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    model: &'p MatchingModel<T>,
    lambda: f64,
) -> Result<Option<Var>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut terms = Vec::new();
    for (id, p) in model.params.iter() {
        if !p.kind.is_regularized() || !p.tensor.requires_grad() {
            continue;
        }
        let v = tape.param(id);
        let sq = tape.mul(v, v)?;
        terms.push(tape.sum(sq)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let all = tape.concat(&terms, 0)?;
    let total = tape.sum(all)?;
    Ok(Some(tape.scale(total, T::lit(lambda))?))
}

fn with_penalty<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    model: &'p MatchingModel<T>,
    loss: Var,
    lambda: f64,
) -> Result<Var> {
    match l2_penalty(tape, model, lambda)? {
        Some(p) => tape.add(loss, p),
        None => Ok(loss),
    }
}

/// One question with its positives and the negatives chosen for it.
#[derive(Debug, Clone)]
pub struct DiscriminatorExample<'a> {
    pub question: &'a [u32],
    pub positives: Vec<&'a [u32]>,
    pub negatives: Vec<&'a [u32]>,
}

/// Discriminator loss of a batch plus the L2 penalty.
///
/// All sentences of the batch share one batch-norm pass in train mode.
pub fn discriminator_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    model: &'p MatchingModel<T>,
    batch: &[DiscriminatorExample<'_>],
    l2: f64,
    pass: &mut Pass<'_>,
) -> Result<(Var, Vec<BatchStats<T>>)> {
    let mut sentences: Vec<&[u32]> = Vec::new();
    let mut pairs = Vec::new();
    let mut is_pos = Vec::new();
    for ex in batch {
        let q = sentences.len();
        sentences.push(ex.question);
        for (answers, label) in [(&ex.positives, true), (&ex.negatives, false)] {
            for a in answers {
                pairs.push((q, sentences.len()));
                sentences.push(a);
                is_pos.push(label);
            }
        }
    }
    let (scores, stats) = model.score_batch(tape, &sentences, &pairs, pass)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, p) in scores.into_iter().zip(is_pos) {
        if p {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    let loss = discriminator_objective(tape, &pos, &neg)?;
    Ok((with_penalty(tape, model, loss, l2)?, stats))
}

fn finish_step<T: Scalar>(
    model: &mut MatchingModel<T>,
    adam: &mut AdamState<T>,
    grads: Gradients<T>,
    stats: &[BatchStats<T>],
    at: StepIndex,
    what: &str,
) -> Result<()> {
    model.params.zero_grad();
    grads.accumulate_into(&mut model.params)?;
    if model.params.flat_grad().iter().any(|g| !g.is_finite()) {
        return Err(at.diverged(format!("non-finite {what} gradient")));
    }
    adam_step(&mut model.params, adam)?;
    model.update_running_stats(stats)?;
    if let Some((_, p)) = model.params.iter().find(|(_, p)| !p.tensor.is_finite()) {
        return Err(at.diverged(format!("parameter `{}` became non-finite after {what} update", p.name)));
    }
    Ok(())
}

/// One Adam update of the discriminator; returns the pre-update loss.
pub fn discriminator_step<T: Scalar>(
    model: &mut MatchingModel<T>,
    adam: &mut AdamState<T>,
    batch: &[DiscriminatorExample<'_>],
    l2: f64,
    rng: &mut dyn RngCore,
    at: StepIndex,
) -> Result<T> {
    let (value, grads, stats) = {
        let mut tape = Tape::with_params(&model.params);
        let (loss, stats) = discriminator_loss(&mut tape, model, batch, l2, &mut Pass::Train(rng))?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(at.diverged(format!("discriminator loss is {value}")));
        }
        (value, tape.backward(loss)?, stats)
    };
    finish_step(model, adam, grads, &stats, at, "discriminator")?;
    Ok(value)
}

/// `log(1 − D(A′|Q))` from the discriminator's score `f`, floored at `log(1e-12)`.
pub fn reward<T: Scalar>(f: T) -> T {
    sigmoid(-f).max(T::lit(LOG_FLOOR)).ln()
}

/// `(1/S) Σ_k log softmax(scores)[sampled_k] · advantages_k`.
///
/// Its gradient is the REINFORCE estimate for the sampled actions.
pub fn reinforce_surrogate<T: Scalar>(
    tape: &mut Tape<'_, T>,
    scores: Var,
    sampled: &[usize],
    advantages: &[T],
) -> Result<Var> {
    if sampled.len() != advantages.len() {
        return Err(Error::shape("reinforce_surrogate", &[sampled.len()], &[advantages.len()]));
    }
    if tape.shape(scores).len() != 1 {
        return Err(Error::Contract("policy scores must be a vector".into()));
    }
    let logp = tape.log_softmax(scores, 0)?;
    let chosen = tape.pick(logp, sampled)?;
    let adv = tape.input(Tensor::vector(advantages.to_vec()));
    let weighted = tape.mul(chosen, adv)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, T::one() / T::from_usize_lossy(sampled.len()))
}

/// One question's pool, the sampled positions and their rewards.
#[derive(Debug, Clone)]
pub struct GeneratorExample<'a, T> {
    pub question: &'a [u32],
    pub pool: Vec<&'a [u32]>,
    pub sampled: Vec<usize>,
    pub rewards: Vec<T>,
}

/// Generator surrogate over the full pool (scored in the pass's mode) plus the L2 penalty.
pub fn generator_surrogate<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    model: &'p MatchingModel<T>,
    example: &GeneratorExample<'_, T>,
    baseline: f64,
    l2: f64,
    pass: &mut Pass<'_>,
) -> Result<(Var, Vec<BatchStats<T>>)> {
    if example.pool.is_empty() {
        return Err(Error::Contract("generator step over an empty pool".into()));
    }
    let mut sentences = Vec::with_capacity(example.pool.len() + 1);
    sentences.push(example.question);
    sentences.extend(example.pool.iter().copied());
    let pairs: Vec<(usize, usize)> = (1..sentences.len()).map(|i| (0, i)).collect();
    let (scores, stats) = model.score_batch(tape, &sentences, &pairs, pass)?;
    let scores = tape.concat(&scores, 0)?;
    let b = T::lit(baseline);
    let adv: Vec<T> = example.rewards.iter().map(|&r| r - b).collect();
    let surrogate = reinforce_surrogate(tape, scores, &example.sampled, &adv)?;
    Ok((with_penalty(tape, model, surrogate, l2)?, stats))
}

/// One Adam update of the generator; returns the pre-update surrogate.
pub fn generator_step<T: Scalar>(
    model: &mut MatchingModel<T>,
    adam: &mut AdamState<T>,
    example: &GeneratorExample<'_, T>,
    baseline: f64,
    l2: f64,
    rng: &mut dyn RngCore,
    at: StepIndex,
) -> Result<T> {
    if let Some(r) = example.rewards.iter().find(|r| !r.is_finite()) {
        return Err(at.diverged(format!("reward is {r}")));
    }
    if !baseline.is_finite() {
        return Err(at.diverged(format!("baseline is {baseline}")));
    }
    let (value, grads, stats) = {
        let mut tape = Tape::with_params(&model.params);
        let (loss, stats) = generator_surrogate(&mut tape, model, example, baseline, l2, &mut Pass::Train(rng))?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(at.diverged(format!("generator surrogate is {value}")));
        }
        (value, tape.backward(loss)?, stats)
    };
    finish_step(model, adam, grads, &stats, at, "generator")?;
    Ok(value)
}
