//! Adversarial training: candidate pools, the generator's sampling
//! distribution, discriminator and REINFORCE generator updates, and the
//! alternating training loop.

mod pool;
mod steps;
mod train;


pub use pool::{build_pool, AnswerRef, CandidatePool, PoolSource};
pub use steps::{
    discriminator_loss, discriminator_objective, discriminator_step, generator_distribution, generator_step,
    generator_surrogate, l2_penalty, log_one_minus_d, pool_scores, reinforce_surrogate, reward, sample_negatives,
    DiscriminatorExample, GeneratorExample, Sampling, StepIndex, LOG_FLOOR,
};
pub use train::{
    train, train_with, EpochRecord, Phase, RewardBaseline, TrainConfig, TrainOutcome, DEFAULT_L2, DEFAULT_NEG_SAMPLES,
    DEFAULT_POOL_SIZE,
};
