pub mod adversarial;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod verify;

pub use error::{Error, Result};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Model64 = model::MatchingModel<f64>;
pub type Model32 = model::MatchingModel<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
pub type Embeddings64 = model::EmbeddingTable<f64>;
pub type Embeddings32 = model::EmbeddingTable<f32>;
pub type TrainOutcome64 = adversarial::TrainOutcome<f64>;
