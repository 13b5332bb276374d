use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::ranking::{auc, gauc, ScoredLabel};
use super::replay::{nsctr_with, sctr, CreativeRanker, NsctrConfig, RankContext};
use crate::record::ImpressionRecord;

/// Flat key-value summary of offline metrics for one model on one log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub impressions: u64,
    pub clicks: u64,
    pub log_ctr: f64,
    pub auc: Option<f64>,
    pub auc_support: usize,
    pub gauc: Option<f64>,
    pub gauc_support: usize,
    pub sctr: Option<f64>,
    pub sctr_matched: u64,
    pub nsctr: Option<f64>,
    pub nsctr_matched: u64,
    pub nsctr_impressions: u64,
    pub nsctr_zero_match_ads: usize,
    /// Set when a metric could not be computed; holds the reason.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Plain click-through rate of a log.
pub fn log_ctr(log: &[ImpressionRecord]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::InvalidInput("ctr of an empty log".into()));
    }
    let clicks: u64 = log.iter().map(|r| r.click as u64).sum();
    Ok(clicks as f64 / log.len() as f64)
}

/// Ranker score of each impression's shown creative against its click,
/// grouped by user. Contexts use the record's position in the log.
pub fn shown_scores(log: &[ImpressionRecord], ranker: &dyn CreativeRanker) -> Result<Vec<ScoredLabel>> {
    log.iter()
        .enumerate()
        .map(|(i, r)| {
            let ctx = RankContext {
                user: r.user_id,
                ad: r.ad_id,
                impression: i as u64,
            };
            ScoredLabel::new(ranker.score(&ctx, r.shown_creative_id), r.clicked(), r.user_id.0 as u64)
        })
        .collect()
}

/// All offline metrics of `ranker` on `log`. Metrics that are undefined on
/// this log are left empty with a warning; invalid scores are errors.
pub fn evaluate(log: &[ImpressionRecord], ranker: &dyn CreativeRanker, cfg: NsctrConfig) -> Result<MetricReport> {
    let mut rep = MetricReport {
        impressions: log.len() as u64,
        clicks: log.iter().map(|r| r.click as u64).sum(),
        log_ctr: log_ctr(log)?,
        ..Default::default()
    };
    let scored = shown_scores(log, ranker)?;
    let soft = |res: Result<()>, warnings: &mut Vec<String>| -> Result<()> {
        match res {
            Err(Error::Undefined(m)) => {
                warnings.push(m);
                Ok(())
            }
            other => other,
        }
    };
    let mut w = Vec::new();
    soft(
        auc(&scored).map(|v| {
            rep.auc = Some(v.value);
            rep.auc_support = v.support;
        }),
        &mut w,
    )?;
    soft(
        gauc(&scored).map(|v| {
            rep.gauc = Some(v.value);
            rep.gauc_support = v.support;
        }),
        &mut w,
    )?;
    soft(
        sctr(log, ranker).map(|v| {
            rep.sctr = Some(v.value);
            rep.sctr_matched = v.matched;
        }),
        &mut w,
    )?;
    soft(
        nsctr_with(log, ranker, cfg).map(|v| {
            rep.nsctr = Some(v.value);
            rep.nsctr_matched = v.matched;
            rep.nsctr_impressions = v.impressions;
            rep.nsctr_zero_match_ads = v.zero_match_ads;
        }),
        &mut w,
    )?;
    if rep.nsctr_zero_match_ads > 0 {
        w.push(format!(
            "nsctr: {} ads had no matched impression ({:?} policy)",
            rep.nsctr_zero_match_ads, cfg.zero_match
        ));
    }
    rep.warnings = w;
    Ok(rep)
}
