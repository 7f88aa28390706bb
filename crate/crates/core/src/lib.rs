//! Streaming correlated matching decoder for quantum error correction.

pub mod buffer;
pub mod correlations;
pub mod engine;
pub mod harness;
pub mod model;
pub mod parallel;
pub mod scalar;
pub mod stream;

pub use scalar::Real;

pub type NoiseModel64 = model::NoiseModel<f64>;
pub type NoiseModel32 = model::NoiseModel<f32>;
pub type MatchingGraph64 = model::MatchingGraph<f64>;
pub type MatchingGraph32 = model::MatchingGraph<f32>;
pub type ModelTemplate64 = model::ModelTemplate<f64>;
pub type ModelTemplate32 = model::ModelTemplate<f32>;
pub type Matching64 = engine::Matching<f64>;
pub type Matching32 = engine::Matching<f32>;
pub type ExactDecoder64 = engine::ExactDecoder<f64>;
pub type ExactDecoder32 = engine::ExactDecoder<f32>;
pub type GraphBuffer64 = buffer::GraphBuffer<f64>;
pub type GraphBuffer32 = buffer::GraphBuffer<f32>;
pub type StreamingDecoder64 = parallel::StreamingDecoder<f64>;
pub type StreamingDecoder32 = parallel::StreamingDecoder<f32>;
pub type FitResult64 = harness::FitResult<f64>;
pub type LambdaResult64 = harness::LambdaResult<f64>;
