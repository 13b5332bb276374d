//! Ad and creative ranking at desk scale: a synthetic click world, a joint
//! ad/creative CTR model with a quantized score bridge, four serving
//! architectures with a latency model, and replay metrics for creative
//! rankers.

pub mod error;
pub mod ids;
pub mod jac;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod record;
pub mod rng;
pub mod simworld;

pub use error::{Error, Result};
pub use ids::{AdId, CreativeId, UserId};
pub use metrics::{CreativeRanker, MetricReport, RankContext};
pub use pipeline::{Architecture, ArchitecturePlan, ExperimentReport, ServedPage};
pub use record::ImpressionRecord;
pub use simworld::{World, WorldConfig};
