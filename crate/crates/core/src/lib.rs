//! Stacked ensembles of shallow convolutional text classifiers.
//!
//! Posts are tokenized, embedded into a fixed-length matrix, and classified
//! into three classes by CNNs with five filter banks, max-over-time pooling,
//! one hidden dense layer, and a softmax output. Each hyperparameter point
//! drawn by random search yields one model per cross-validation fold; the
//! fold models are averaged into an ensemble, ensembles are ranked by their
//! training-set F over classes 1 and 2, and the top K are averaged again.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix the scalar
//! type used for training (`f32`) and for gradient checks (`f64`).

pub mod class;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod store;
pub mod text;

pub use class::Class;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Rng;
pub use scalar::Real;

pub type Model = model::ModelWeights<f32>;
pub type Model64 = model::ModelWeights<f64>;
pub type Embeddings = text::EmbeddingTable<f32>;
pub type Embeddings64 = text::EmbeddingTable<f64>;
pub type Encoded = text::EncodedExample<f32>;
pub type Encoded64 = text::EncodedExample<f64>;
pub type Ensemble = ensemble::FoldEnsemble<f32>;
pub type Ensemble64 = ensemble::FoldEnsemble<f64>;
pub type Stack = ensemble::StackedEnsemble<f32>;
pub type Stack64 = ensemble::StackedEnsemble<f64>;
