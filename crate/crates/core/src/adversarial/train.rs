use rand::{RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pool::build_pool;
use super::steps::{
    discriminator_step, generator_distribution, generator_step, pool_scores, reward, sample_negatives,
    DiscriminatorExample, GeneratorExample, Sampling, StepIndex,
};
use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_split;
use crate::model::{EmbeddingTable, MatchingModel, ModelConfig};
use crate::numerics::{AdamState, LrSchedule, Scalar};

pub const DEFAULT_POOL_SIZE: usize = 100;
pub const DEFAULT_NEG_SAMPLES: usize = 10;
pub const DEFAULT_L2: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Questions per discriminator update.
    pub batch_size: usize,
    /// Negatives drawn per question (`S`).
    pub neg_samples: usize,
    /// Alternative answers per question (`P`).
    pub pool_size: usize,
    pub lr: LrSchedule,
    pub l2: f64,
    /// Generator-sampled negatives when on; uniform pool negatives otherwise.
    pub adversarial: bool,
    /// Leading epochs, inside `epochs`, in which both models train as
    /// discriminators on uniform negatives before the adversarial game starts.
    pub warmup_epochs: usize,
    /// Multiplies the learning rate of policy-gradient generator updates.
    pub generator_lr_scale: f64,
    pub sampling: Sampling,
    pub seed: u64,
    /// Split scored after every phase; dev if it has labeled threads, else test.
    pub eval_split: Option<Split>,
    /// Re-verify after construction that no pool holds its question's positives.
    pub check_pools: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 1,
            neg_samples: DEFAULT_NEG_SAMPLES,
            pool_size: DEFAULT_POOL_SIZE,
            lr: LrSchedule::default(),
            l2: DEFAULT_L2,
            adversarial: true,
            warmup_epochs: 0,
            generator_lr_scale: 1.0,
            sampling: Sampling::Stochastic,
            seed: 0,
            eval_split: None,
            check_pools: cfg!(debug_assertions),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.neg_samples == 0 || self.neg_samples > self.pool_size {
            return bad("need 1 ≤ neg_samples ≤ pool_size");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be a non-negative number");
        }
        if !(self.generator_lr_scale.is_finite() && self.generator_lr_scale > 0.0) {
            return bad("generator_lr_scale must be positive");
        }
        let lr = &self.lr;
        if !(lr.base.is_finite() && lr.base > 0.0 && lr.factor.is_finite() && lr.factor > 0.0 && lr.every > 0) {
            return bad("learning-rate schedule needs positive base, factor and period");
        }
        Ok(())
    }
}

/// Mean reward of the previous generator epoch; 0 before the first one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    pub value: f64,
    pub count: usize,
}

impl RewardBaseline {
    /// Replaces the baseline with the mean of `rewards`; an empty epoch keeps the old value.
    pub fn update(&mut self, rewards: &[f64]) {
        if rewards.is_empty() {
            return;
        }
        self.value = rewards.iter().sum::<f64>() / rewards.len() as f64;
        self.count = rewards.len();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Discriminator,
    Generator,
}

/// One line of the metrics log. Held-out metrics belong to the model updated in `phase`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub mean_reward: Option<f64>,
    pub baseline: Option<f64>,
    pub dev_map: Option<f64>,
    pub dev_mrr: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub discriminator: MatchingModel<T>,
    pub generator: MatchingModel<T>,
    pub log: Vec<EpochRecord>,
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_POOL: u64 = 2;
const STREAM_SAMPLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn held_out(corpus: &Corpus, requested: Option<Split>) -> Option<Split> {
    if requested.is_some() {
        return requested;
    }
    [Split::Dev, Split::Test]
        .into_iter()
        .find(|&s| corpus.split(s).any(|t| t.num_relevant() > 0))
}

fn held_out_metrics<T: Scalar>(model: &MatchingModel<T>, corpus: &Corpus, split: Option<Split>) -> Result<(Option<f64>, Option<f64>)> {
    let Some(split) = split else { return Ok((None, None)) };
    match evaluate_split(model, corpus, split) {
        Ok((m, _)) => Ok((Some(m.map), Some(m.mrr))),
        Err(Error::Evaluation(_)) => Ok((None, None)),
        Err(e) => Err(e),
    }
}

/// [`train_with`] without a record callback.
pub fn train<T: Scalar>(
    corpus: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    embeddings: Option<EmbeddingTable<T>>,
) -> Result<TrainOutcome<T>> {
    train_with(corpus, model_config, config, embeddings, |_| Ok(()))
}

/// Alternates one discriminator epoch with one generator epoch (discriminator
/// only when `adversarial` is off), calling `on_record` after every phase.
/// During warm-up epochs the generator phase is a supervised step on the
/// discriminator's batches instead of a policy-gradient step.
///
/// Both models are built from `model_config` with the corpus vocabulary size
/// (or the table's, when `embeddings` is given) and seeds derived from `config.seed`.
pub fn train_with<T: Scalar>(
    corpus: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    embeddings: Option<EmbeddingTable<T>>,
    mut on_record: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut mc = model_config.clone();
    mc.vocab_size = corpus.vocabulary.len();
    mc.validate()?;
    corpus.validate()?;

    let train_idx: Vec<usize> = (0..corpus.threads.len())
        .filter(|&i| corpus.threads[i].split == Split::Train)
        .collect();
    let active: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| corpus.threads[i].num_relevant() > 0)
        .collect();
    if active.is_empty() {
        return Err(Error::Corpus("no training thread has a relevant answer".into()));
    }

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let (d_seed, g_seed) = (master.next_u64(), master.next_u64());
    let (mut d, mut g) = match embeddings {
        Some(table) => {
            if table.vocab_size() < corpus.vocabulary.len() {
                return Err(Error::Config(format!(
                    "embedding table has {} rows for a vocabulary of {}",
                    table.vocab_size(),
                    corpus.vocabulary.len()
                )));
            }
            (
                MatchingModel::with_embeddings(mc.clone(), table.clone(), d_seed)?,
                MatchingModel::with_embeddings(mc, table, g_seed)?,
            )
        }
        None => (MatchingModel::new(mc.clone(), d_seed)?, MatchingModel::new(mc, g_seed)?),
    };

    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut pool_rng = stream(config.seed, STREAM_POOL);
    let mut sample_rng = stream(config.seed, STREAM_SAMPLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);

    let mut d_adam = AdamState::new(&d.params, config.lr.base);
    let mut g_adam = AdamState::new(&g.params, config.lr.base);
    let mut baseline = RewardBaseline::default();
    let split = held_out(corpus, config.eval_split);
    let mut log = Vec::new();

    for epoch in 0..config.epochs {
        let lr = config.lr.at_epoch(epoch);
        d_adam.lr = lr;
        g_adam.lr = lr;

        let warm = epoch < config.warmup_epochs;
        let uniform = !config.adversarial || warm;
        let mut order = active.clone();
        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        let mut g_losses = Vec::new();
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &q in chunk {
                let thread = &corpus.threads[q];
                let pool = build_pool(corpus, q, &train_idx, config.pool_size, &mut pool_rng)?;
                if config.check_pools {
                    pool.check(corpus)?;
                }
                let answers = pool.tokens(corpus);
                let s = config.neg_samples.min(pool.len());
                let probs = if !uniform {
                    generator_distribution(&pool_scores(&g, &thread.question_tokens, &answers)?)?
                } else {
                    vec![1.0 / pool.len() as f64; pool.len()]
                        .into_iter()
                        .map(T::lit)
                        .collect()
                };
                let picked = sample_negatives(&probs, s, config.sampling, &mut sample_rng)?;
                batch.push(DiscriminatorExample {
                    question: &thread.question_tokens,
                    positives: thread
                        .candidates
                        .iter()
                        .filter(|c| c.relevant)
                        .map(|c| c.tokens.as_slice())
                        .collect(),
                    negatives: picked.iter().map(|&i| answers[i]).collect(),
                });
            }
            let at = StepIndex { epoch, batch: batch_no };
            let loss = discriminator_step(&mut d, &mut d_adam, &batch, config.l2, &mut dropout_rng, at)?;
            losses.push(loss.as_f64());
            if warm && config.adversarial {
                let loss = discriminator_step(&mut g, &mut g_adam, &batch, config.l2, &mut dropout_rng, at)?;
                g_losses.push(loss.as_f64());
            }
        }
        let (dev_map, dev_mrr) = held_out_metrics(&d, corpus, split)?;
        let record = EpochRecord {
            epoch,
            phase: Phase::Discriminator,
            mean_loss: mean(&losses),
            mean_reward: None,
            baseline: None,
            dev_map,
            dev_mrr,
            lr,
        };
        log::info!("{}", serde_json::to_string(&record)?);
        on_record(&record)?;
        log.push(record);

        if !config.adversarial {
            continue;
        }
        if warm {
            let (dev_map, dev_mrr) = held_out_metrics(&g, corpus, split)?;
            let record = EpochRecord {
                epoch,
                phase: Phase::Generator,
                mean_loss: mean(&g_losses),
                mean_reward: None,
                baseline: None,
                dev_map,
                dev_mrr,
                lr,
            };
            log::info!("{}", serde_json::to_string(&record)?);
            on_record(&record)?;
            log.push(record);
            continue;
        }
        let g_lr = lr * config.generator_lr_scale;
        g_adam.lr = g_lr;
        let mut order = active.clone();
        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        let mut rewards = Vec::new();
        for (batch_no, &q) in order.iter().enumerate() {
            let thread = &corpus.threads[q];
            let pool = build_pool(corpus, q, &train_idx, config.pool_size, &mut pool_rng)?;
            if config.check_pools {
                pool.check(corpus)?;
            }
            let answers = pool.tokens(corpus);
            let probs = generator_distribution(&pool_scores(&g, &thread.question_tokens, &answers)?)?;
            let picked = sample_negatives(&probs, config.neg_samples.min(pool.len()), config.sampling, &mut sample_rng)?;
            let chosen: Vec<&[u32]> = picked.iter().map(|&i| answers[i]).collect();
            let r: Vec<T> = pool_scores(&d, &thread.question_tokens, &chosen)?
                .into_iter()
                .map(reward)
                .collect();
            rewards.extend(r.iter().map(|x| x.as_f64()));
            let example = GeneratorExample {
                question: &thread.question_tokens,
                pool: answers,
                sampled: picked,
                rewards: r,
            };
            let at = StepIndex { epoch, batch: batch_no };
            let loss = generator_step(&mut g, &mut g_adam, &example, baseline.value, config.l2, &mut dropout_rng, at)?;
            losses.push(loss.as_f64());
        }
        let used = baseline.value;
        baseline.update(&rewards);
        let (dev_map, dev_mrr) = held_out_metrics(&g, corpus, split)?;
        let record = EpochRecord {
            epoch,
            phase: Phase::Generator,
            mean_loss: mean(&losses),
            mean_reward: Some(mean(&rewards)),
            baseline: Some(used),
            dev_map,
            dev_mrr,
            lr: g_lr,
        };
        log::info!("{}", serde_json::to_string(&record)?);
        on_record(&record)?;
        log.push(record);
    }
    Ok(TrainOutcome {
        discriminator: d,
        generator: g,
        log,
    })
}
