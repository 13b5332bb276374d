//! Offline ranking-quality metrics.
//!
//! Explicit ranking metrics (AUC, GAUC) score a prediction against a click
//! label. Implicit sub-ranking metrics (sCTR, NSCTR) replay a logged
//! impression stream against a creative ranker and only count impressions
//! where the ranker's top creative matches the one actually shown.

mod ranking;
mod replay;
mod report;

pub use ranking::{auc, gauc, pearson, MetricValue, ScoredLabel};
pub use replay::{
    nsctr, nsctr_with, select_creative, sctr, CreativeRanker, NsctrConfig, NsctrValue,
    RankContext, ReplayValue, ZeroMatchPolicy,
};
pub use report::{evaluate, log_ctr, shown_scores, MetricReport};

pub use crate::record::ImpressionRecord;
