//! Block scheduling and the streaming decode pipeline.

mod pipeline;
mod plan;

pub use pipeline::{PipelineConfig, PipelineError, Prediction, ShotOutcome, ShotSession, StreamingDecoder};
pub use plan::{choose_block_size, plan_fusion, BlockPlan, BlockSize, CodeFamily, PlanError};
