//! Multi-scale matching scorer.
//!
//! A sentence is encoded into a hierarchy `(X⁰, X¹, …, Xᴷ)`: level 0 is the
//! embedded token sequence and each further level is produced by a
//! convolution block (conv → batch norm → relu → max pool). A pair of levels
//! `(u, v)` is compared position-by-position with a small feed-forward
//! comparator, reduced by max-pooling in both directions and averaged into a
//! [match vector](forward::MatchVector). The aggregator maps the
//! concatenated match vectors of the selected scale pairs to a single score.

mod checkpoint;
mod forward;
mod objective;

#[cfg(test)]
mod tests;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BatchNorm1d, BatchStats, Mode, ParamId, ParamKind, ParamStore, Scalar, Tensor};

pub use checkpoint::Checkpoint;
pub use forward::{Hierarchy, MatchVector, ScoreTrace};
pub use objective::ParamObjective;

/// Uniform bound for randomly initialized word vectors.
pub const EMBEDDING_INIT_BOUND: f64 = 0.1;

/// Which scale pairs `(u, v)` feed the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Word-to-word only: `(0,0)`.
    WordOnly,
    /// Word-to-word plus word-to-ngram in both directions.
    WordPlusNgram,
    /// Every `(u, v)` with `u, v ∈ 0..=K`.
    Full,
}

impl ScoreMode {
    /// Scale pairs in aggregation order.
    ///
    /// `WordPlusNgram` yields `(0,0), (0,1)…(0,K), (1,0)…(K,0)`; `Full` is lexicographic.
    pub fn scale_pairs(self, levels: usize) -> Vec<(usize, usize)> {
        match self {
            ScoreMode::WordOnly => vec![(0, 0)],
            ScoreMode::WordPlusNgram => {
                let mut pairs = vec![(0, 0)];
                pairs.extend((1..=levels).map(|v| (0, v)));
                pairs.extend((1..=levels).map(|u| (u, 0)));
                pairs
            }
            ScoreMode::Full => (0..=levels)
                .flat_map(|u| (0..=levels).map(move |v| (u, v)))
                .collect(),
        }
    }

    /// Deepest encoder level the mode reads.
    pub fn max_level(self, levels: usize) -> usize {
        match self {
            ScoreMode::WordOnly => 0,
            _ => levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Number of convolution blocks `K`.
    pub levels: usize,
    pub channels: usize,
    pub compare_hidden: usize,
    /// Output width of each comparator (`h_dim`).
    pub match_dim: usize,
    pub aggregate_hidden: usize,
    pub mode: ScoreMode,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("channels", self.channels),
            ("compare_hidden", self.compare_hidden),
            ("match_dim", self.match_dim),
            ("aggregate_hidden", self.aggregate_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Representation width at an encoder level.
    pub fn width(&self, level: usize) -> usize {
        if level == 0 {
            self.embed_dim
        } else {
            self.channels
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1,
            embed_dim: 300,
            levels: 2,
            channels: 128,
            compare_hidden: 128,
            match_dim: 128,
            aggregate_hidden: 128,
            mode: ScoreMode::WordPlusNgram,
            dropout: 0.2,
        }
    }
}

/// Word vectors with a trainable flag; row 0 is the reserved unknown/padding token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub vectors: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn random(vocab_size: usize, dim: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            vectors: Tensor::uniform(&[vocab_size, dim], EMBEDDING_INIT_BOUND, rng),
            trainable: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub weight: ParamId,
    pub bias: ParamId,
    pub norm: BatchNorm1d<T>,
}

/// Two affine layers with a relu between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.l1.weight"), ParamKind::Weight, glorot(hidden, input, rng)),
            b1: store.add(format!("{prefix}.l1.bias"), ParamKind::Bias, Tensor::zeros(&[hidden])),
            w2: store.add(format!("{prefix}.l2.weight"), ParamKind::Weight, glorot(output, hidden, rng)),
            b2: store.add(format!("{prefix}.l2.bias"), ParamKind::Bias, Tensor::zeros(&[output])),
        }
    }
}

/// Comparator `ℋ` for one scale pair; its first layer reads `[q_i, a_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub pair: (usize, usize),
    pub q_width: usize,
    pub a_width: usize,
    pub net: FeedForward,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, rng)
}

/// Full parameter set of one scorer `f_θ(Q, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub seed: u64,
    pub(crate) embedding: ParamId,
    pub(crate) blocks: Vec<ConvBlock<T>>,
    pub(crate) comparators: Vec<Comparator>,
    pub(crate) aggregator: FeedForward,
}

impl<T: Scalar> MatchingModel<T> {
    /// Randomly initialized model; every draw comes from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::random(config.vocab_size, config.embed_dim, &mut rng);
        Self::build(config, table, seed, &mut rng)
    }

    /// Model whose word vectors come from `table` (frozen unless the table is trainable).
    pub fn with_embeddings(mut config: ModelConfig, table: EmbeddingTable<T>, seed: u64) -> Result<Self> {
        config.vocab_size = table.vocab_size();
        config.embed_dim = table.dim();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep the remaining draws aligned with `new`
        let _ = EmbeddingTable::<T>::random(config.vocab_size, config.embed_dim, &mut rng);
        Self::build(config, table, seed, &mut rng)
    }

    fn build(config: ModelConfig, table: EmbeddingTable<T>, seed: u64, rng: &mut dyn RngCore) -> Result<Self> {
        let mut params = ParamStore::new();
        let trainable = table.trainable;
        let embedding = params.add("embedding", ParamKind::Embedding, table.vectors);
        params.get_mut(embedding).tensor.set_requires_grad(trainable);

        let mut blocks = Vec::with_capacity(config.levels);
        for k in 0..config.levels {
            let c_in = config.width(k);
            let bound = (6.0 / ((c_in + config.channels) * 3) as f64).sqrt();
            let weight = params.add(
                format!("encoder.{k}.conv.weight"),
                ParamKind::Weight,
                Tensor::uniform(&[config.channels, c_in, 3], bound, rng),
            );
            let bias = params.add(
                format!("encoder.{k}.conv.bias"),
                ParamKind::Bias,
                Tensor::zeros(&[config.channels]),
            );
            let norm = BatchNorm1d::new(&mut params, &format!("encoder.{k}.bn"), config.channels);
            blocks.push(ConvBlock { weight, bias, norm });
        }

        let pairs = config.mode.scale_pairs(config.levels);
        let comparators = pairs
            .iter()
            .map(|&(u, v)| {
                let (q_width, a_width) = (config.width(u), config.width(v));
                let net = FeedForward::new(
                    &mut params,
                    &format!("compare.{u}_{v}"),
                    q_width + a_width,
                    config.compare_hidden,
                    config.match_dim,
                    rng,
                );
                Comparator {
                    pair: (u, v),
                    q_width,
                    a_width,
                    net,
                }
            })
            .collect();
        let aggregator = FeedForward::new(
            &mut params,
            "aggregate",
            2 * config.match_dim * pairs.len(),
            config.aggregate_hidden,
            1,
            rng,
        );
        Ok(Self {
            config,
            params,
            seed,
            embedding,
            blocks,
            comparators,
            aggregator,
        })
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn embeddings_trainable(&self) -> bool {
        self.params.get(self.embedding).tensor.requires_grad()
    }

    pub fn blocks(&self) -> &[ConvBlock<T>] {
        &self.blocks
    }

    pub fn comparators(&self) -> &[Comparator] {
        &self.comparators
    }

    pub fn aggregator(&self) -> &FeedForward {
        &self.aggregator
    }

    pub fn num_scale_pairs(&self) -> usize {
        self.comparators.len()
    }

    /// Folds train-mode batch statistics (one entry per conv block) into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.is_empty() {
            return Ok(());
        }
        if stats.len() != self.blocks.len() {
            return Err(Error::shape("update_running_stats", &[self.blocks.len()], &[stats.len()]));
        }
        for (block, s) in self.blocks.iter_mut().zip(stats) {
            block.norm.update_running(s);
        }
        Ok(())
    }

    /// Named non-trainable buffers (batch-norm running statistics), in a fixed order.
    pub fn buffers(&self) -> Vec<(String, &[T])> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(k, b)| {
                [
                    (format!("encoder.{k}.bn.running_mean"), b.norm.running_mean.as_slice()),
                    (format!("encoder.{k}.bn.running_var"), b.norm.running_var.as_slice()),
                ]
            })
            .collect()
    }

    pub(crate) fn buffer_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        let rest = name.strip_prefix("encoder.")?;
        let (k, field) = rest.split_once(".bn.")?;
        let block = self.blocks.get_mut(k.parse::<usize>().ok()?)?;
        match field {
            "running_mean" => Some(&mut block.norm.running_mean),
            "running_var" => Some(&mut block.norm.running_var),
            _ => None,
        }
    }
}

/// Forward-pass mode; train mode carries the generator driving dropout.
pub enum Pass<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Pass<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Pass::Eval => Mode::Eval,
            Pass::Train(_) => Mode::Train,
        }
    }
}
