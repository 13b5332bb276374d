use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::record::ImpressionRecord;

/// What a creative ranker sees besides the creative being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankContext {
    pub user: UserId,
    pub ad: AdId,
    /// Position of the impression (or request) in its stream. Rankers that
    /// must be random per impression derive their randomness from it.
    pub impression: u64,
}

/// Scores a creative for an (user, ad) context. Must be a pure function of
/// its inputs so replayed metrics are reproducible.
pub trait CreativeRanker: Sync {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64;
}

impl<F> CreativeRanker for F
where
    F: Fn(&RankContext, CreativeId) -> f64 + Sync,
{
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        self(ctx, creative)
    }
}

/// Argmax over `candidates`; the lowest index wins ties.
pub fn select_creative(
    ranker: &dyn CreativeRanker,
    ctx: &RankContext,
    candidates: &[CreativeId],
) -> Result<(usize, CreativeId)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in candidates.iter().enumerate() {
        let s = ranker.score(ctx, c);
        if !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "ranker score for creative {c} of ad {}",
                ctx.ad
            )));
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| (i, candidates[i]))
        .ok_or_else(|| Error::InvalidInput(format!("ad {} has no candidates", ctx.ad)))
}

fn context(i: usize, r: &ImpressionRecord) -> RankContext {
    RankContext {
        user: r.user_id,
        ad: r.ad_id,
        impression: i as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayValue {
    pub value: f64,
    /// Impressions where the ranker agreed with the shown creative.
    pub matched: u64,
    pub impressions: u64,
}

/// Simulated CTR: clicks over impressions restricted to records where the
/// ranker's top creative equals the shown creative.
pub fn sctr(log: &[ImpressionRecord], ranker: &dyn CreativeRanker) -> Result<ReplayValue> {
    if log.is_empty() {
        return Err(Error::InvalidInput("sctr on an empty log".into()));
    }
    let (mut matched, mut clicks) = (0u64, 0u64);
    for (i, r) in log.iter().enumerate() {
        let (_, chosen) = select_creative(ranker, &context(i, r), &r.candidate_creative_ids)?;
        if chosen == r.shown_creative_id {
            matched += 1;
            clicks += r.click as u64;
        }
    }
    if matched == 0 {
        return Err(Error::Undefined("sctr: no matched impressions".into()));
    }
    Ok(ReplayValue {
        value: clicks as f64 / matched as f64,
        matched,
        impressions: log.len() as u64,
    })
}

/// Treatment of ads whose impressions never match the ranker's choice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroMatchPolicy {
    /// Drop the ad's impressions from numerator and denominator.
    #[default]
    Skip,
    /// Count the ad at its own logged CTR.
    ImputeLogCtr,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsctrConfig {
    pub zero_match: ZeroMatchPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsctrValue {
    pub value: f64,
    pub matched: u64,
    /// Impressions in the denominator after the zero-match policy.
    pub impressions: u64,
    pub ads: usize,
    pub zero_match_ads: usize,
}

#[derive(Default, Clone, Copy)]
struct AdCounts {
    imp: u64,
    clk: u64,
    imp_s: u64,
    clk_s: u64,
}

/// Normalized sCTR with the default zero-match policy.
pub fn nsctr(log: &[ImpressionRecord], ranker: &dyn CreativeRanker) -> Result<NsctrValue> {
    nsctr_with(log, ranker, NsctrConfig::default())
}

/// Normalized sCTR. Each ad's matched clicks are rescaled by its total over
/// matched impressions, restoring the ad's share of the log; the rescaled
/// clicks are summed in ascending ad-id order and divided by the total
/// impression count.
pub fn nsctr_with(
    log: &[ImpressionRecord],
    ranker: &dyn CreativeRanker,
    cfg: NsctrConfig,
) -> Result<NsctrValue> {
    if log.is_empty() {
        return Err(Error::InvalidInput("nsctr on an empty log".into()));
    }
    let mut per_ad: BTreeMap<AdId, AdCounts> = BTreeMap::new();
    for (i, r) in log.iter().enumerate() {
        let c = per_ad.entry(r.ad_id).or_default();
        c.imp += 1;
        c.clk += r.click as u64;
        let (_, chosen) = select_creative(ranker, &context(i, r), &r.candidate_creative_ids)?;
        if chosen == r.shown_creative_id {
            c.imp_s += 1;
            c.clk_s += r.click as u64;
        }
    }

    let mut impressions = 0u64;
    let mut matched = 0u64;
    let mut clicks = 0.0;
    let mut zero_match_ads = 0;
    for c in per_ad.values() {
        if c.imp_s == 0 {
            zero_match_ads += 1;
            match cfg.zero_match {
                ZeroMatchPolicy::Skip => continue,
                ZeroMatchPolicy::ImputeLogCtr => {
                    impressions += c.imp;
                    clicks += c.clk as f64;
                    continue;
                }
            }
        }
        impressions += c.imp;
        matched += c.imp_s;
        clicks += c.clk_s as f64 * c.imp as f64 / c.imp_s as f64;
    }
    if impressions == 0 {
        return Err(Error::Undefined("nsctr: no ad has a matched impression".into()));
    }
    Ok(NsctrValue {
        value: clicks / impressions as f64,
        matched,
        impressions,
        ads: per_ad.len(),
        zero_match_ads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ad: u32, shown: u32, cands: &[u32], click: u8) -> ImpressionRecord {
        ImpressionRecord {
            user_id: UserId(0),
            ad_id: AdId(ad),
            shown_creative_id: CreativeId(shown),
            candidate_creative_ids: cands.iter().map(|&c| CreativeId(c)).collect(),
            click,
            cpc_bid: 1.0,
        }
    }

    /// Ranker that always prefers the creative with the lowest id.
    fn lowest(_: &RankContext, c: CreativeId) -> f64 {
        -(c.0 as f64)
    }

    #[test]
    fn ties_pick_lowest_index() {
        let flat = |_: &RankContext, _: CreativeId| 1.0;
        let ctx = RankContext {
            user: UserId(0),
            ad: AdId(0),
            impression: 0,
        };
        let cands = [CreativeId(9), CreativeId(3), CreativeId(5)];
        assert_eq!(select_creative(&flat, &ctx, &cands).unwrap(), (0, CreativeId(9)));
    }

    #[test]
    fn non_finite_scores_error() {
        let bad = |_: &RankContext, _: CreativeId| f64::NAN;
        let log = vec![rec(0, 1, &[1, 2], 1)];
        assert!(matches!(nsctr(&log, &bad), Err(Error::NonFinite(_))));
        assert!(matches!(sctr(&log, &bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sctr_six_records_two_matched() {
        // ranker picks creative 1 everywhere
        let log = vec![
            rec(0, 1, &[1, 2], 1),
            rec(0, 1, &[1, 2], 0),
            rec(0, 2, &[1, 2], 1),
            rec(0, 2, &[1, 2], 1),
            rec(1, 2, &[1, 2], 0),
            rec(1, 2, &[1, 2], 1),
        ];
        let v = sctr(&log, &lowest).unwrap();
        assert_eq!(v.value, 0.5);
        assert_eq!(v.matched, 2);
    }

    #[test]
    fn nsctr_single_ad_hand_arithmetic() {
        // 4 impressions, 2 matched with 1 click: clicks = 1 * 4 / 2 = 2, nsctr = 2 / 4
        let log = vec![
            rec(0, 1, &[1, 2], 1),
            rec(0, 1, &[1, 2], 0),
            rec(0, 2, &[1, 2], 1),
            rec(0, 2, &[1, 2], 0),
        ];
        let v = nsctr(&log, &lowest).unwrap();
        assert_eq!(v.value, 0.5);
        assert_eq!(v.matched, 2);
        assert_eq!(v.impressions, 4);
    }

    #[test]
    fn always_matching_ranker_gives_plain_ctr() {
        let log: Vec<_> = (0..50)
            .map(|i| rec(i % 3, 10 + i % 4, &[10, 11, 12, 13], (i % 7 == 0) as u8))
            .collect();
        let shown = |ctx: &RankContext, c: CreativeId| {
            (log[ctx.impression as usize].shown_creative_id == c) as u8 as f64
        };
        let ctr = log.iter().map(|r| r.click as f64).sum::<f64>() / log.len() as f64;
        assert_eq!(nsctr(&log, &shown).unwrap().value, ctr);
        assert_eq!(sctr(&log, &shown).unwrap().value, ctr);
    }

    #[test]
    fn zero_match_policies() {
        let log = vec![
            rec(0, 1, &[1, 2], 1),
            rec(0, 2, &[1, 2], 0),
            // ad 1 never matches: ranker picks 3, log only shows 4
            rec(1, 4, &[3, 4], 1),
            rec(1, 4, &[3, 4], 1),
        ];
        let skip = nsctr(&log, &lowest).unwrap();
        assert_eq!(skip.zero_match_ads, 1);
        assert_eq!(skip.impressions, 2);
        assert_eq!(skip.value, 1.0);

        let imputed = nsctr_with(
            &log,
            &lowest,
            NsctrConfig {
                zero_match: ZeroMatchPolicy::ImputeLogCtr,
            },
        )
        .unwrap();
        assert_eq!(imputed.impressions, 4);
        assert_eq!(imputed.value, (2.0 + 2.0) / 4.0);
    }

    #[test]
    fn empty_and_unmatched_logs_error() {
        assert!(nsctr(&[], &lowest).is_err());
        assert!(sctr(&[], &lowest).is_err());
        let log = vec![rec(1, 4, &[3, 4], 1)];
        assert!(matches!(sctr(&log, &lowest), Err(Error::Undefined(_))));
        assert!(matches!(nsctr(&log, &lowest), Err(Error::Undefined(_))));
    }

    #[test]
    fn uniform_match_rates_make_sctr_equal_nsctr() {
        // every ad matches exactly half its impressions
        let log = vec![
            rec(0, 1, &[1, 2], 1),
            rec(0, 2, &[1, 2], 0),
            rec(1, 3, &[3, 4], 0),
            rec(1, 4, &[3, 4], 1),
            rec(1, 3, &[3, 4], 1),
            rec(1, 4, &[3, 4], 0),
        ];
        let s = sctr(&log, &lowest).unwrap().value;
        let n = nsctr(&log, &lowest).unwrap().value;
        assert!((s - n).abs() < 1e-15);
    }
}
