use std::collections::HashSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::latency::{Architecture, ArchitecturePlan, Nanos};
use super::scoring::{AdScorer, CreativeAwareAdScorer};
use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::metrics::{select_creative, CreativeRanker, RankContext};
use crate::rng::{counter_rng, stream, uniform};
use crate::simworld::{pick, World};

/// One incoming request: the user and the retrieved ad candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub user: UserId,
    pub candidates: Vec<AdId>,
}

/// The request stream is a pure function of (world, seed, index), so every
/// arm of an experiment sees the same users and candidates.
pub fn make_request(world: &World, seed: u64, id: u64, retrieval_m: usize) -> Result<Request> {
    if retrieval_m == 0 {
        return Err(Error::InvalidInput("empty retrieval set".into()));
    }
    let m = retrieval_m.min(world.num_ads());
    let user = UserId(pick(world.num_users(), &[seed, stream("request.user"), id]) as u32);
    let mut rng = counter_rng(seed, "request.retrieval", id);
    let mut candidates: Vec<AdId> = sample(&mut rng, world.num_ads(), m)
        .into_iter()
        .map(|i| AdId(i as u32))
        .collect();
    candidates.sort_unstable();
    Ok(Request { id, user, candidates })
}

/// Models an arm serves with. Which ones are needed depends on the plan.
#[derive(Clone, Copy, Default)]
pub struct Models<'a> {
    pub ad: Option<&'a dyn AdScorer>,
    pub creative_aware_ad: Option<&'a dyn CreativeAwareAdScorer>,
    pub creative: Option<&'a dyn CreativeRanker>,
}

impl Models<'_> {
    pub fn check(&self, arch: Architecture) -> Result<()> {
        let missing = |what: &str| Err(Error::InvalidInput(format!("{arch} needs {what}")));
        match arch {
            Architecture::NoCr if self.ad.is_none() => missing("an ad scorer"),
            Architecture::PostCr | Architecture::PeriCr if self.ad.is_none() => missing("an ad scorer"),
            Architecture::PostCr | Architecture::PeriCr if self.creative.is_none() => missing("a creative ranker"),
            Architecture::PreCr if self.creative.is_none() => missing("a creative ranker"),
            Architecture::PreCr if self.creative_aware_ad.is_none() => missing("a creative-aware ad scorer"),
            _ => Ok(()),
        }
    }
}

/// An experiment arm: a named architecture with its models.
#[derive(Clone, Copy)]
pub struct Arm<'a> {
    pub name: &'a str,
    pub plan: ArchitecturePlan,
    pub models: Models<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServedSlot {
    pub ad: AdId,
    pub creative: CreativeId,
    /// The ad score the page was ordered by.
    pub pctr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedPage {
    pub slots: Vec<ServedSlot>,
    pub rt: Nanos,
}

impl ServedPage {
    /// Ads distinct, each creative belongs to its ad, at most `l` slots.
    pub fn validate(&self, world: &World, l: usize) -> Result<()> {
        if self.slots.len() > l {
            return Err(Error::InvalidInput(format!("{} slots served, limit {l}", self.slots.len())));
        }
        let mut seen = HashSet::new();
        for s in &self.slots {
            if !seen.insert(s.ad) {
                return Err(Error::InvalidInput(format!("ad {} served twice", s.ad)));
            }
            if world.creative(s.creative)?.ad != s.ad {
                return Err(Error::InvalidInput(format!("creative {} does not belong to ad {}", s.creative, s.ad)));
            }
        }
        Ok(())
    }
}

/// Per-request serving parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServeOptions {
    pub slots: usize,
    pub seed: u64,
    /// Candidate count charged by the latency model. The creative stage is
    /// billed for the retrieved creatives scaled by this over the number
    /// retrieved; `None` bills what was actually retrieved.
    pub latency_candidates: Option<u64>,
}

/// Uniformly random creative of `ad`, keyed by (seed, request, ad).
pub fn random_creative(world: &World, seed: u64, request: u64, ad: AdId) -> Result<CreativeId> {
    let cs = &world.ad(ad)?.creatives;
    Ok(cs[pick(cs.len(), &[seed, stream("serve.random_creative"), request, ad.0 as u64])])
}

fn score_checked(v: Result<f64>, what: &str, ad: AdId) -> Result<f64> {
    let v = v?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{what} for ad {ad}")));
    }
    Ok(v)
}

/// Serves one request: top-`l` ads by eCPM (ad score times CPC, ties to the
/// lower ad id) with the plan's creative for each. Clicks are not drawn
/// here.
pub fn run_request(arm: &Arm<'_>, world: &World, req: &Request, opts: &ServeOptions) -> Result<ServedPage> {
    let (l, seed) = (opts.slots, opts.seed);
    if req.candidates.is_empty() {
        return Err(Error::InvalidInput(format!("request {} has no candidates", req.id)));
    }
    let arch = arm.plan.architecture;
    arm.models.check(arch)?;
    let ctx = |ad| RankContext {
        user: req.user,
        ad,
        impression: req.id,
    };
    let best_creative = |ad: AdId| -> Result<CreativeId> {
        let r = arm.models.creative.expect("checked");
        Ok(select_creative(r, &ctx(ad), &world.ad(ad)?.creatives)?.1)
    };

    // (ad, score, creative chosen before ad ranking)
    let mut scored: Vec<(AdId, f64, Option<CreativeId>)> = Vec::with_capacity(req.candidates.len());
    for &ad in &req.candidates {
        let entry = match arch {
            Architecture::PreCr => {
                let c = best_creative(ad)?;
                let s = arm.models.creative_aware_ad.expect("checked").score_ad_creative(world, req.user, ad, c);
                (ad, score_checked(s, "creative-aware ad score", ad)?, Some(c))
            }
            _ => {
                let s = arm.models.ad.expect("checked").score_ad(world, req.user, ad);
                (ad, score_checked(s, "ad score", ad)?, None)
            }
        };
        scored.push(entry);
    }
    let mut keyed: Vec<(f64, AdId, f64, Option<CreativeId>)> = scored
        .into_iter()
        .map(|(ad, s, c)| Ok((s * world.ad(ad)?.cpc, ad, s, c)))
        .collect::<Result<_>>()?;
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(l);

    let mut slots = Vec::with_capacity(keyed.len());
    for (_, ad, pctr, pre) in keyed {
        let creative = match (arch, pre) {
            (_, Some(c)) => c,
            (Architecture::NoCr, _) => random_creative(world, seed, req.id, ad)?,
            _ => best_creative(ad)?,
        };
        slots.push(ServedSlot { ad, creative, pctr });
    }

    let creatives_of = |ads: &mut dyn Iterator<Item = AdId>| -> Result<u64> {
        ads.map(|a| world.ad(a).map(|a| a.creatives.len() as u64)).sum()
    };
    let mut all = creatives_of(&mut req.candidates.iter().copied())?;
    if let Some(m) = opts.latency_candidates {
        all = (all as u128 * m as u128 / req.candidates.len() as u128) as u64;
    }
    let survivors = creatives_of(&mut slots.iter().map(|s| s.ad))?;
    let rt = arm.plan.request_latency(all, survivors)?;
    Ok(ServedPage { slots, rt })
}

/// Click draw shared by every arm that shows `ad` on request `request`.
pub fn click_uniform(seed: u64, request: u64, ad: AdId) -> f64 {
    uniform(&[seed, stream("serve.click"), request, ad.0 as u64])
}
